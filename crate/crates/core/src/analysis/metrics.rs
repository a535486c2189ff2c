use std::collections::HashSet;

use super::AnalysisError;
use crate::cache::CacheGeometry;
use crate::shutter::Snapshot;
use crate::vm::Pid;

/// Active and reused line counts of one pid over a flush-mode snapshot
/// sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub pid: Pid,
    pub active: Vec<u64>,
    /// Lines present in both this snapshot and the previous one; 0 at t = 0.
    pub reused: Vec<u64>,
}

impl Profile {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

pub fn profiles(snapshots: &[Snapshot], pid: Pid) -> Result<Profile, AnalysisError> {
    if let Some(s) = snapshots.iter().find(|s| !s.flags.flush) {
        return Err(AnalysisError::NotFlushed(s.sequence));
    }
    let mut active = Vec::with_capacity(snapshots.len());
    let mut reused = Vec::with_capacity(snapshots.len());
    let mut prev: HashSet<u64> = HashSet::new();
    for s in snapshots {
        let lines = s.lines_of(pid);
        active.push(lines.len() as u64);
        reused.push(lines.intersection(&prev).count() as u64);
        prev = lines;
    }
    Ok(Profile { pid, active, reused })
}

fn common_len(a: &Profile, b: &Profile) -> Result<usize, AnalysisError> {
    match a.len().min(b.len()) {
        0 => Err(AnalysisError::Empty),
        t => Ok(t),
    }
}

/// Mean fraction by which the two active sets together overflow the cache.
/// Profiles are truncated to the shorter one.
pub fn active_set_excess(obs: &Profile, intf: &Profile, geom: &CacheGeometry) -> Result<f64, AnalysisError> {
    let t = common_len(obs, intf)?;
    let total = geom.lines() as f64;
    let sum: f64 = (0..t)
        .map(|i| ((obs.active[i] + intf.active[i]) as f64 / total - 1.0).max(0.0))
        .sum();
    Ok(sum / t as f64)
}

/// Mean product of the observed reused-set quota and the interfering
/// active-set quota. Profiles are truncated to the shorter one.
pub fn reused_set_eviction(obs: &Profile, intf: &Profile, geom: &CacheGeometry) -> Result<f64, AnalysisError> {
    let t = common_len(obs, intf)?;
    let total = geom.lines() as f64;
    let sum: f64 = (0..t)
        .map(|i| (obs.reused[i] as f64 / total) * (intf.active[i] as f64 / total))
        .sum();
    Ok(sum / t as f64)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Length(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::Undefined("need at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shutter::{ModeFlags, SnapshotRecord};

    fn flushed(seq: u32, lines: &[u64]) -> Snapshot {
        let flags = ModeFlags {
            flush: true,
            ..ModeFlags::default()
        };
        let mut s = Snapshot::empty(CacheGeometry::default(), seq, 0, flags);
        for (i, &a) in lines.iter().enumerate() {
            s.records[i * 3] = SnapshotRecord::new(Pid(1), a);
        }
        s
    }

    fn profile(active: Vec<u64>, reused: Vec<u64>) -> Profile {
        Profile {
            pid: Pid(1),
            active,
            reused,
        }
    }

    #[test]
    fn reuse_is_intersection() {
        let snaps = [flushed(0, &[0, 64, 128]), flushed(1, &[64, 128, 192])];
        let p = profiles(&snaps, Pid(1)).unwrap();
        assert_eq!(p.active, vec![3, 3]);
        assert_eq!(p.reused, vec![0, 2]);
        let disjoint = [flushed(0, &[0]), flushed(1, &[64])];
        assert_eq!(profiles(&disjoint, Pid(1)).unwrap().reused, vec![0, 0]);
    }

    #[test]
    fn profiles_need_flush_mode() {
        let mut s = flushed(4, &[0]);
        s.flags.flush = false;
        assert_eq!(profiles(&[s], Pid(1)), Err(AnalysisError::NotFlushed(4)));
    }

    #[test]
    fn excess_arithmetic() {
        let g = CacheGeometry::default();
        let fit = profile(vec![10_000; 4], vec![0; 4]);
        assert_eq!(active_set_excess(&fit, &fit, &g).unwrap(), 0.0);
        let big = profile(vec![20_000; 4], vec![0; 4]);
        let ase = active_set_excess(&big, &big, &g).unwrap();
        assert!((ase - (40_000.0 - 32_768.0) / 32_768.0).abs() < 1e-12);
        assert_eq!(active_set_excess(&big, &profile(vec![], vec![]), &g), Err(AnalysisError::Empty));
    }

    #[test]
    fn eviction_arithmetic() {
        let g = CacheGeometry::default();
        let obs = profile(vec![16_384; 3], vec![16_384; 3]);
        let intf = profile(vec![13_107; 5], vec![0; 5]);
        let rse = reused_set_eviction(&obs, &intf, &g).unwrap();
        assert!((rse - 0.5 * 13_107.0 / 32_768.0).abs() < 1e-12);
        let none = profile(vec![100; 3], vec![0; 3]);
        assert_eq!(reused_set_eviction(&none, &intf, &g).unwrap(), 0.0);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(AnalysisError::Undefined(_))));
        assert!(matches!(pearson(&[1.0], &[1.0, 2.0]), Err(AnalysisError::Length(1, 2))));
    }
}
