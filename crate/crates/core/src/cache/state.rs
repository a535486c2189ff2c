use std::hash::{Hash, Hasher};
use std::ops::Range;

use super::policy::VictimSelector;
use super::{CacheError, CacheGeometry, ReplacementPolicy};

/// Tag-memory entry for one (set, way) slot. Readers ignore every other
/// field when `valid` is false.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LineState {
    pub valid: bool,
    pub dirty: bool,
    pub tag: u64,
    pub last_touch: u64,
    pub fill_order: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    /// Physical address of the first byte of the evicted line.
    pub line_addr: u64,
    pub dirty: bool,
}

impl Eviction {
    pub fn frame(&self) -> u64 {
        self.line_addr >> crate::vm::PAGE_SHIFT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub hit: bool,
    pub set: u64,
    pub way: u32,
    /// Always `None` on a hit.
    pub victim: Option<Eviction>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub writebacks: u64,
}

/// How [`CacheState::flush_and_trash`] clears out prior content.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushStyle {
    /// Drop every valid bit; no traffic.
    HardInvalidate,
    /// Stream trigger-owned lines through the cache and keep whatever survives.
    Trash,
    /// Stream trigger-owned lines, then drop every valid bit.
    TrashThenInvalidate,
}

/// Shared write-back, write-allocate cache with an introspection port.
#[derive(Debug, Clone)]
pub struct CacheState {
    geom: CacheGeometry,
    policy: ReplacementPolicy,
    selector: VictimSelector,
    lines: Vec<LineState>,
    clock: u64,
    fill_seq: u64,
    trash_cursor: u64,
    uncached: Vec<Range<u64>>,
    stats: CacheStats,
}

impl CacheState {
    pub fn new(geom: CacheGeometry, policy: ReplacementPolicy) -> Result<Self, CacheError> {
        let selector = policy.selector(geom.ways())?;
        Ok(Self {
            geom,
            policy,
            selector,
            lines: vec![LineState::default(); geom.lines() as usize],
            clock: 0,
            fill_seq: 0,
            trash_cursor: 0,
            uncached: Vec::new(),
            stats: CacheStats::default(),
        })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geom
    }

    pub fn policy(&self) -> &ReplacementPolicy {
        &self.policy
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Marks a physical range as non-cacheable. Accesses to it are rejected.
    pub fn declare_uncached(&mut self, range: Range<u64>) {
        self.uncached.push(range);
    }

    pub fn is_uncached(&self, addr: u64) -> bool {
        self.uncached.iter().any(|r| r.contains(&addr))
    }

    fn set_slice(&self, set: u64) -> &[LineState] {
        let ways = self.geom.ways() as usize;
        let base = set as usize * ways;
        &self.lines[base..base + ways]
    }

    pub fn access(&mut self, addr: u64, is_write: bool) -> Result<AccessResult, CacheError> {
        if self.is_uncached(addr) {
            return Err(CacheError::Uncached(addr));
        }
        let parts = self.geom.decompose(addr)?;
        self.clock += 1;
        let ways = self.geom.ways() as usize;
        let base = parts.set as usize * ways;

        let set = &mut self.lines[base..base + ways];
        if let Some(way) = set.iter().position(|l| l.valid && l.tag == parts.tag) {
            let line = &mut set[way];
            line.last_touch = self.clock;
            line.dirty |= is_write;
            self.stats.hits += 1;
            return Ok(AccessResult {
                hit: true,
                set: parts.set,
                way: way as u32,
                victim: None,
            });
        }

        self.stats.misses += 1;
        let way = match set.iter().position(|l| !l.valid) {
            Some(w) => w,
            None => self.selector.pick(set),
        };
        let old = set[way];
        let victim = old.valid.then(|| Eviction {
            line_addr: (old.tag << self.geom.tag_shift()) | (parts.set << self.geom.offset_bits()),
            dirty: old.dirty,
        });
        if let Some(v) = victim {
            self.stats.evictions += 1;
            if v.dirty {
                self.stats.writebacks += 1;
            }
        }
        set[way] = LineState {
            valid: true,
            dirty: is_write,
            tag: parts.tag,
            last_touch: self.clock,
            fill_order: self.fill_seq,
        };
        self.fill_seq += 1;
        Ok(AccessResult {
            hit: false,
            set: parts.set,
            way: way as u32,
            victim,
        })
    }

    /// Reads the tag entry at `(way, set)` and returns the physical address of
    /// the cached line, or `None` for an invalid entry.
    pub fn introspect(&self, way: u32, set: u64) -> Result<Option<u64>, CacheError> {
        if way >= self.geom.ways() || set >= self.geom.sets() {
            return Err(CacheError::Coordinates { way, set });
        }
        let line = self.set_slice(set)[way as usize];
        Ok(line
            .valid
            .then(|| (line.tag << self.geom.tag_shift()) | (set << self.geom.offset_bits())))
    }

    /// Every tag entry as [`CacheState::introspect`] would report it, in
    /// set-major, way-minor order.
    pub fn sweep(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        let ways = self.geom.ways() as usize;
        let (tag_shift, offset_bits) = (self.geom.tag_shift(), self.geom.offset_bits());
        self.lines.chunks(ways).enumerate().flat_map(move |(set, lines)| {
            let index = (set as u64) << offset_bits;
            lines.iter().map(move |l| l.valid.then(|| (l.tag << tag_shift) | index))
        })
    }

    /// Raw tag-memory entry; used by tests and diagnostics.
    pub fn line(&self, way: u32, set: u64) -> Option<&LineState> {
        if way >= self.geom.ways() || set >= self.geom.sets() {
            return None;
        }
        Some(&self.set_slice(set)[way as usize])
    }

    pub fn valid_lines(&self) -> u64 {
        self.lines.iter().filter(|l| l.valid).count() as u64
    }

    /// Clears every valid bit. Dirty lines are counted as written back.
    pub fn hard_invalidate(&mut self) {
        for line in &mut self.lines {
            if line.valid && line.dirty {
                self.stats.writebacks += 1;
            }
            *line = LineState::default();
        }
    }

    /// First physical address of the trigger-owned buffer region: the upper
    /// half of the physical address space, rounded to a way boundary.
    pub fn trigger_region_base(&self) -> u64 {
        let half = (self.geom.phys_limit() / 2) as u64;
        half - half % self.geom.way_size()
    }

    fn trigger_region_lines(&self) -> u64 {
        let span = (self.geom.phys_limit() - u128::from(self.trigger_region_base())) as u64;
        (span / self.geom.line_size()).max(1)
    }

    /// Streams `lines` distinct trigger-owned lines through the cache, one
    /// per set in round-robin order. Consecutive calls continue where the last
    /// one stopped, so trash traffic never hits on its own earlier lines
    /// unless the region wraps.
    pub fn trash(&mut self, lines: u64) {
        for _ in 0..lines {
            self.trash_one();
        }
    }

    /// One line of trash traffic; returns the address written.
    pub fn trash_one(&mut self) -> u64 {
        let addr = self.trigger_region_base()
            + (self.trash_cursor % self.trigger_region_lines()) * self.geom.line_size();
        self.trash_cursor = self.trash_cursor.wrapping_add(1);
        // Trigger buffers are never declared uncached and always in range.
        let _ = self.access(addr, true);
        addr
    }

    /// True if `addr` lies in the trigger-owned buffer region.
    pub fn is_trigger_owned(&self, addr: u64) -> bool {
        addr >= self.trigger_region_base() && self.geom.contains(addr)
    }

    pub fn flush_and_trash(&mut self, trash_lines: u64, style: FlushStyle) {
        match style {
            FlushStyle::HardInvalidate => self.hard_invalidate(),
            FlushStyle::Trash => self.trash(trash_lines),
            FlushStyle::TrashThenInvalidate => {
                self.trash(trash_lines);
                self.hard_invalidate();
            }
        }
    }

    /// Digest over the complete mutable state, including the victim RNG
    /// position. Two states with equal fingerprints behave identically.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        self.lines.hash(&mut h);
        self.clock.hash(&mut h);
        self.fill_seq.hash(&mut h);
        self.trash_cursor.hash(&mut h);
        self.stats.hash(&mut h);
        self.selector.rng_position().hash(&mut h);
        h.finish()
    }
}
