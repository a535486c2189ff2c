use std::collections::{BTreeMap, HashSet};

use super::ShutterError;
use crate::cache::CacheGeometry;
use crate::vm::{Pid, Vma};

/// One introspected line. Invalid lines carry `pid = u64::MAX`, `address = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SnapshotRecord {
    pub pid: u64,
    /// Resolved virtual address, or the physical address when resolution is
    /// off or the frame has no mapping.
    pub address: u64,
}

impl SnapshotRecord {
    pub const INVALID: SnapshotRecord = SnapshotRecord {
        pid: u64::MAX,
        address: 0,
    };

    pub fn new(pid: Pid, address: u64) -> Self {
        Self { pid: pid.0, address }
    }

    pub fn is_valid(&self) -> bool {
        self.pid != u64::MAX
    }

    /// Owner of a valid line; `None` for invalid records.
    pub fn owner(&self) -> Option<Pid> {
        self.is_valid().then_some(Pid(self.pid))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ModeFlags {
    pub flush: bool,
    pub sync: bool,
    pub resolve: bool,
    pub layout: bool,
}

impl ModeFlags {
    pub const KNOWN_BITS: u16 = 0b1111;

    pub fn bits(&self) -> u16 {
        (self.flush as u16) | (self.sync as u16) << 1 | (self.resolve as u16) << 2 | (self.layout as u16) << 3
    }

    pub fn from_bits(bits: u16) -> Option<Self> {
        (bits & !Self::KNOWN_BITS == 0).then_some(Self {
            flush: bits & 1 != 0,
            sync: bits & 2 != 0,
            resolve: bits & 4 != 0,
            layout: bits & 8 != 0,
        })
    }
}

/// Full sweep of the cache's tag memory at one instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub sequence: u32,
    /// Global access count when the sweep ran.
    pub timestamp: u64,
    pub flags: ModeFlags,
    pub geometry: CacheGeometry,
    /// `ways * sets` records, set-major, way-minor.
    pub records: Vec<SnapshotRecord>,
    /// Per-pid VMA lists, present when layout capture is on.
    pub layouts: BTreeMap<Pid, Vec<Vma>>,
}

impl Snapshot {
    /// A snapshot with every line invalid.
    pub fn empty(geometry: CacheGeometry, sequence: u32, timestamp: u64, flags: ModeFlags) -> Self {
        Self {
            sequence,
            timestamp,
            flags,
            geometry,
            records: vec![SnapshotRecord::INVALID; geometry.lines() as usize],
            layouts: BTreeMap::new(),
        }
    }

    pub fn index(&self, way: u32, set: u64) -> usize {
        set as usize * self.geometry.ways() as usize + way as usize
    }

    pub fn record(&self, way: u32, set: u64) -> SnapshotRecord {
        self.records[self.index(way, set)]
    }

    /// `(way, set)` for a position in [`Snapshot::records`].
    pub fn coordinates(&self, index: usize) -> (u32, u64) {
        let w = self.geometry.ways() as usize;
        ((index % w) as u32, (index / w) as u64)
    }

    /// Records of one set, indexed by way.
    pub fn set(&self, set: u64) -> &[SnapshotRecord] {
        let w = self.geometry.ways() as usize;
        let start = set as usize * w;
        &self.records[start..start + w]
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_valid()).count()
    }

    /// Distinct line addresses attributed to `pid`.
    pub fn lines_of(&self, pid: Pid) -> HashSet<u64> {
        self.records
            .iter()
            .filter(|r| r.pid == pid.0)
            .map(|r| r.address)
            .collect()
    }

    pub fn check_shape(&self) -> Result<(), ShutterError> {
        if self.records.len() as u64 != self.geometry.lines() {
            return Err(ShutterError::Geometry(format!(
                "snapshot holds {} records, geometry needs {}",
                self.records.len(),
                self.geometry.lines()
            )));
        }
        Ok(())
    }
}

/// Fraction of coordinates whose record changed between `a` and `b`.
pub fn pollution(a: &Snapshot, b: &Snapshot) -> Result<f64, ShutterError> {
    if a.geometry != b.geometry {
        return Err(ShutterError::Geometry("snapshots have different geometries".into()));
    }
    a.check_shape()?;
    b.check_shape()?;
    let changed = a.records.iter().zip(&b.records).filter(|(x, y)| x != y).count();
    Ok(changed as f64 / a.records.len() as f64)
}
