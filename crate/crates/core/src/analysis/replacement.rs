use std::collections::HashSet;

use super::AnalysisError;
use crate::shutter::{Snapshot, SnapshotRecord};
use crate::vm::Pid;

/// Number of `targets` lines of `pid` resident in `snap`.
pub fn resident_count(snap: &Snapshot, pid: Pid, targets: &HashSet<u64>) -> u32 {
    snap.records
        .iter()
        .filter(|r| r.pid == pid.0 && targets.contains(&r.address))
        .count() as u32
}

/// Empirical distribution of resident counts; entry `k` (0..=ways) is the
/// fraction of trials that found exactly `k` lines.
pub fn replacement_density(ks: &[u32], ways: u32) -> Result<Vec<f64>, AnalysisError> {
    if ks.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut counts = vec![0u64; ways as usize + 1];
    for &k in ks {
        counts[(k.min(ways)) as usize] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / ks.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WayDecision {
    /// The single way that changed now holds the expected line.
    Way(u32),
    /// The diff did not isolate one allocation.
    Violation(String),
}

/// Which way of `set` received `expected` between `before` and `after`.
pub fn way_decision(before: &Snapshot, after: &Snapshot, set: u64, expected: SnapshotRecord) -> WayDecision {
    if before.geometry != after.geometry {
        return WayDecision::Violation("geometry mismatch".into());
    }
    set_decision(before.set(set), after.set(set), expected)
}

/// [`way_decision`] over the records of one set, indexed by way.
pub fn set_decision(before: &[SnapshotRecord], after: &[SnapshotRecord], expected: SnapshotRecord) -> WayDecision {
    let changed: Vec<usize> = before
        .iter()
        .zip(after)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(w, _)| w)
        .collect();
    match changed.as_slice() {
        [w] if after[*w] == expected => WayDecision::Way(*w as u32),
        [w] => WayDecision::Violation(format!("way {w} changed to an unexpected line")),
        [] => WayDecision::Violation("no way changed".into()),
        many => WayDecision::Violation(format!("{} ways changed", many.len())),
    }
}

/// Per-way allocation counts plus the number of rejected decisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WayFrequency {
    pub counts: Vec<u64>,
    pub violations: u64,
}

impl WayFrequency {
    pub fn new(ways: u32) -> Self {
        Self {
            counts: vec![0; ways as usize],
            violations: 0,
        }
    }

    pub fn add(&mut self, d: &WayDecision) {
        match d {
            WayDecision::Way(w) => self.counts[*w as usize] += 1,
            WayDecision::Violation(_) => self.violations += 1,
        }
    }

    pub fn merge(&mut self, other: &WayFrequency) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.violations += other.violations;
    }

    pub fn decisions(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Result<Vec<f64>, AnalysisError> {
        let n = self.decisions();
        if n == 0 {
            return Err(AnalysisError::Empty);
        }
        Ok(self.counts.iter().map(|&c| c as f64 / n as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheGeometry;
    use crate::shutter::ModeFlags;

    #[test]
    fn density_sums_to_one() {
        let d = replacement_density(&[16, 16, 10, 0], 16).unwrap();
        assert_eq!(d.len(), 17);
        assert_eq!(d[16], 0.5);
        assert_eq!(d[0], 0.25);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(replacement_density(&[], 16).is_err());
    }

    #[test]
    fn decisions_from_diffs() {
        let g = CacheGeometry::default();
        let a = Snapshot::empty(g, 0, 0, ModeFlags::default());
        let line = SnapshotRecord::new(Pid(1), 0x7f00_0000_0000);
        let mut b = a.clone();
        let i = b.index(5, 0);
        b.records[i] = line;
        assert_eq!(way_decision(&a, &b, 0, line), WayDecision::Way(5));
        assert!(matches!(way_decision(&a, &a, 0, line), WayDecision::Violation(_)));
        let mut c = b.clone();
        let j = c.index(6, 0);
        c.records[j] = SnapshotRecord::new(Pid(1), 64);
        assert!(matches!(way_decision(&a, &c, 0, line), WayDecision::Violation(_)));

        let mut f = WayFrequency::new(16);
        f.add(&way_decision(&a, &b, 0, line));
        f.add(&way_decision(&a, &c, 0, line));
        assert_eq!(f.decisions(), 1);
        assert_eq!(f.violations, 1);
        assert_eq!(f.frequencies().unwrap()[5], 1.0);
    }
}
