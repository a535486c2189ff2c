use std::collections::BTreeMap;

use super::{ModeFlags, Snapshot, SnapshotRecord, ShutterError};
use crate::cache::{CacheState, FlushStyle};
use crate::vm::{Pid, VirtualMemory, PAGE_SHIFT, PAGE_SIZE};
use crate::workload::{Activation, PostProcessing, TriggerHook, WorkloadError, WorldView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutterConfig {
    /// Flush the cache after every snapshot so the next one shows only newly
    /// allocated lines.
    pub flush: bool,
    /// Pause observed tasks from activation until post-processing is done.
    pub sync: bool,
    /// Attribute lines to `(pid, virtual address)` through the reverse map.
    pub resolve: bool,
    pub capture_layout: bool,
    pub flush_style: FlushStyle,
    /// Lines written by a trashing flush; `None` means twice the cache.
    pub trash_lines: Option<u64>,
    /// Snapshot slots preallocated for transparent mode.
    pub reserved_snapshots: Option<u64>,
    /// Trigger-owned lines touched after each capture, standing in for the
    /// cache footprint of resolution and copy-out work.
    pub pollution_lines: u64,
}

impl Default for ShutterConfig {
    fn default() -> Self {
        Self {
            flush: true,
            sync: true,
            resolve: true,
            capture_layout: false,
            flush_style: FlushStyle::Trash,
            trash_lines: None,
            reserved_snapshots: None,
            pollution_lines: 0,
        }
    }
}

impl ShutterConfig {
    pub fn transparent() -> Self {
        Self {
            flush: false,
            ..Self::default()
        }
    }

    pub fn flags(&self) -> ModeFlags {
        ModeFlags {
            flush: self.flush,
            sync: self.sync,
            resolve: self.resolve,
            layout: self.capture_layout,
        }
    }

    /// Checks that transparent mode has room for `planned` snapshots.
    pub fn check_capacity(&self, planned: u64) -> Result<(), ShutterError> {
        if self.flush {
            return Ok(());
        }
        match self.reserved_snapshots {
            Some(reserved) if reserved >= planned => Ok(()),
            Some(reserved) => Err(ShutterError::Capacity { reserved }),
            None => Err(ShutterError::Capacity { reserved: 0 }),
        }
    }

    fn post_processing(&self, cache: &CacheState) -> PostProcessing {
        let trash = self.trash_lines.unwrap_or(2 * cache.geometry().lines());
        let mut post = PostProcessing {
            trash_lines: self.pollution_lines,
            invalidate: false,
        };
        if self.flush {
            match self.flush_style {
                FlushStyle::HardInvalidate => post.invalidate = true,
                FlushStyle::Trash => post.trash_lines += trash,
                FlushStyle::TrashThenInvalidate => {
                    post.trash_lines += trash;
                    post.invalidate = true;
                }
            }
        }
        post
    }
}

/// Sweeps every `(way, set)` of the tag memory. Reads only; the cache is
/// not touched.
pub fn acquire(
    cache: &CacheState,
    vm: &VirtualMemory,
    cfg: &ShutterConfig,
    sequence: u32,
    timestamp: u64,
    observed: &[Pid],
) -> Snapshot {
    let mut records = Vec::with_capacity(cache.geometry().lines() as usize);
    records.extend(cache.sweep().map(|entry| match entry {
        None => SnapshotRecord::INVALID,
        Some(paddr) => match cfg.resolve.then(|| vm.resolve_first(paddr >> PAGE_SHIFT)).flatten() {
            Some((pid, page)) => SnapshotRecord::new(pid, page | (paddr & (PAGE_SIZE - 1))),
            None => SnapshotRecord::new(Pid::UNRESOLVED, paddr),
        },
    }));
    let mut snap = Snapshot {
        sequence,
        timestamp,
        flags: cfg.flags(),
        geometry: *cache.geometry(),
        records,
        layouts: BTreeMap::new(),
    };
    if cfg.capture_layout {
        snap.layouts = observed
            .iter()
            .filter_map(|&pid| vm.record_layout(pid).ok().map(|l| (pid, l)))
            .collect::<BTreeMap<_, _>>();
    }
    snap
}

/// Destination for captured snapshots.
pub trait SnapshotSink {
    fn accept(&mut self, snapshot: Snapshot) -> Result<(), ShutterError>;
}

impl SnapshotSink for Vec<Snapshot> {
    fn accept(&mut self, snapshot: Snapshot) -> Result<(), ShutterError> {
        self.push(snapshot);
        Ok(())
    }
}

/// Adapts a closure into a [`SnapshotSink`].
pub struct FnSink<F>(pub F);

impl<F: FnMut(Snapshot) -> Result<(), ShutterError>> SnapshotSink for FnSink<F> {
    fn accept(&mut self, snapshot: Snapshot) -> Result<(), ShutterError> {
        (self.0)(snapshot)
    }
}

/// Activation logic plus shutter: the [`TriggerHook`] that takes snapshots
/// during a run.
pub struct Trigger<S> {
    pub config: ShutterConfig,
    pub activation: Activation,
    pub trigger_core: usize,
    pub quiesce_delay: u64,
    sink: S,
    taken: u64,
}

impl<S: SnapshotSink> Trigger<S> {
    pub fn new(config: ShutterConfig, activation: Activation, sink: S) -> Self {
        Self {
            config,
            activation,
            trigger_core: 0,
            quiesce_delay: 0,
            sink,
            taken: 0,
        }
    }

    pub fn taken(&self) -> u64 {
        self.taken
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }
}

impl<S: SnapshotSink> TriggerHook for Trigger<S> {
    fn activation(&self) -> Activation {
        self.activation
    }

    fn synchronous(&self) -> bool {
        self.config.sync
    }

    fn trigger_core(&self) -> usize {
        self.trigger_core
    }

    fn quiesce_delay(&self) -> u64 {
        self.quiesce_delay
    }

    fn capture(&mut self, world: &WorldView<'_>) -> Result<PostProcessing, WorkloadError> {
        if let Err(ShutterError::Capacity { reserved }) = self.config.check_capacity(self.taken + 1) {
            return Err(WorkloadError::Capacity { reserved });
        }
        let sequence = u32::try_from(self.taken)
            .map_err(|_| WorkloadError::Trigger("snapshot sequence overflow".into()))?;
        let snap = acquire(world.cache, world.vm, &self.config, sequence, world.now, world.observed);
        self.sink
            .accept(snap)
            .map_err(|e| WorkloadError::Trigger(e.to_string()))?;
        self.taken += 1;
        Ok(self.config.post_processing(world.cache))
    }
}
