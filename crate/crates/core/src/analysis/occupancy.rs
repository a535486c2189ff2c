use std::collections::BTreeMap;

use crate::shutter::Snapshot;
use crate::vm::Pid;

/// Line counts of one snapshot, split by owner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccupancyRow {
    pub sequence: u32,
    pub timestamp: u64,
    pub per_pid: BTreeMap<Pid, u64>,
    /// Valid lines attributed to pid 0.
    pub unattributed: u64,
    pub invalid: u64,
}

impl OccupancyRow {
    pub fn total(&self) -> u64 {
        self.per_pid.values().sum::<u64>() + self.unattributed + self.invalid
    }

    pub fn of(&self, pid: Pid) -> u64 {
        self.per_pid.get(&pid).copied().unwrap_or(0)
    }
}

pub fn occupancy(snapshots: &[Snapshot]) -> Vec<OccupancyRow> {
    snapshots
        .iter()
        .map(|s| {
            let mut row = OccupancyRow {
                sequence: s.sequence,
                timestamp: s.timestamp,
                ..OccupancyRow::default()
            };
            for r in &s.records {
                match r.owner() {
                    None => row.invalid += 1,
                    Some(Pid::UNRESOLVED) => row.unattributed += 1,
                    Some(pid) => *row.per_pid.entry(pid).or_default() += 1,
                }
            }
            row
        })
        .collect()
}
