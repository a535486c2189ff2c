use super::AnalysisError;
use crate::shutter::Snapshot;
use crate::vm::{Pid, Vma, PAGE_SHIFT, PAGE_SIZE};

/// Resident line count per 4 KB page of one region, per snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatMap {
    pub region: Vma,
    /// `cells[page][snapshot]`
    pub cells: Vec<Vec<u32>>,
    pub sequences: Vec<u32>,
}

impl HeatMap {
    pub fn pages(&self) -> usize {
        self.cells.len()
    }

    pub fn total(&self, snapshot: usize) -> u64 {
        self.cells.iter().map(|row| u64::from(row[snapshot])).sum()
    }
}

/// The latest layout entry named `region` for `pid` across `snapshots`.
pub fn find_region(snapshots: &[Snapshot], pid: Pid, region: &str) -> Result<Vma, AnalysisError> {
    snapshots
        .iter()
        .rev()
        .filter_map(|s| s.layouts.get(&pid))
        .find_map(|vmas| vmas.iter().find(|v| v.name == region).cloned())
        .ok_or_else(|| AnalysisError::UnknownRegion {
            pid: pid.0,
            region: region.to_string(),
        })
}

/// Heat-map of the region named `region`, located through the captured layouts.
pub fn heatmap(snapshots: &[Snapshot], pid: Pid, region: &str) -> Result<HeatMap, AnalysisError> {
    let vma = find_region(snapshots, pid, region)?;
    Ok(heatmap_in(snapshots, pid, &vma))
}

pub fn heatmap_in(snapshots: &[Snapshot], pid: Pid, vma: &Vma) -> HeatMap {
    let pages = vma.len().div_ceil(PAGE_SIZE) as usize;
    let mut cells = vec![vec![0u32; snapshots.len()]; pages];
    for (t, snap) in snapshots.iter().enumerate() {
        for r in snap.records.iter().filter(|r| r.pid == pid.0 && vma.contains(r.address)) {
            cells[((r.address - vma.start) >> PAGE_SHIFT) as usize][t] += 1;
        }
    }
    HeatMap {
        region: vma.clone(),
        cells,
        sequences: snapshots.iter().map(|s| s.sequence).collect(),
    }
}
