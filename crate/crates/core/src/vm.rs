//! Demand-paged virtual memory: per-process VMAs and page tables backed by a
//! shuffled frame allocator, plus the reverse frame map used to attribute
//! cache lines to processes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_SIZE: u64 = 1 << PAGE_SHIFT;
pub const HUGE_PAGE_SIZE: u64 = 2 << 20;
pub const HUGE_PAGE_FRAMES: u64 = HUGE_PAGE_SIZE / PAGE_SIZE;

pub const TEXT_BASE: u64 = 0x0040_0000;
pub const HEAP_BASE: u64 = 0x0060_0000;
pub const MMAP_BASE: u64 = 0x7f00_0000_0000;
pub const GLIBC_BASE: u64 = 0x7ff0_0000_0000;
pub const STACK_TOP: u64 = 0x7fff_ffff_f000;

/// Process identifier. `Pid(0)` is reserved for lines that resolve to no
/// process (kernel, trigger buffers, free memory).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid(pub u64);

impl Pid {
    pub const UNRESOLVED: Pid = Pid(0);
}

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("segmentation fault: pid {pid} touched {vaddr:#x} outside every VMA")]
    SegFault { pid: Pid, vaddr: u64 },
    #[error("page fault: pid {pid} has no mapping for {vaddr:#x}")]
    PageFault { pid: Pid, vaddr: u64 },
    #[error("out of memory: frame pool of pid {0} exhausted")]
    OutOfMemory(Pid),
    #[error("unknown pid {0}")]
    UnknownPid(Pid),
    #[error("pid 0 is reserved")]
    ReservedPid,
    #[error("pid {0} already exists")]
    DuplicatePid(Pid),
    #[error("invalid VMA: {0}")]
    Layout(String),
    #[error("layout line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A contiguous, page-aligned region of one address space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vma {
    pub name: String,
    pub start: u64,
    pub end: u64,
    pub perms: String,
}

impl Vma {
    pub fn new(name: &str, start: u64, end: u64, perms: &str) -> Result<Self, VmError> {
        if start >= end {
            return Err(VmError::Layout(format!("{name}: start {start:#x} >= end {end:#x}")));
        }
        if start % PAGE_SIZE != 0 || end % PAGE_SIZE != 0 {
            return Err(VmError::Layout(format!("{name}: bounds are not page aligned")));
        }
        if name.is_empty() || name.contains('\n') {
            return Err(VmError::Layout("VMA name must be a non-empty single line".into()));
        }
        Ok(Self {
            name: name.to_string(),
            start,
            end,
            perms: perms.to_string(),
        })
    }

    pub fn contains(&self, vaddr: u64) -> bool {
        (self.start..self.end).contains(&vaddr)
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn pages(&self) -> u64 {
        self.len() / PAGE_SIZE
    }

    fn overlaps(&self, other: &Vma) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Renders a layout as `start-end perms name` lines with hexadecimal bounds.
pub fn render_layout(vmas: &[Vma]) -> String {
    let mut out = String::new();
    for v in vmas {
        out.push_str(&format!("{:08x}-{:08x} {} {}\n", v.start, v.end, v.perms, v.name));
    }
    out
}

pub fn parse_layout(text: &str) -> Result<Vec<Vma>, VmError> {
    let mut vmas = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| VmError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut fields = raw.splitn(3, ' ');
        let range = fields.next().ok_or_else(|| err("missing address range"))?;
        let perms = fields.next().ok_or_else(|| err("missing permissions"))?;
        let name = fields.next().ok_or_else(|| err("missing region name"))?;
        let (start, end) = range.split_once('-').ok_or_else(|| err("range must be start-end"))?;
        let start = u64::from_str_radix(start, 16).map_err(|e| err(&e.to_string()))?;
        let end = u64::from_str_radix(end, 16).map_err(|e| err(&e.to_string()))?;
        let vma = Vma::new(name, start, end, perms).map_err(|e| err(&e.to_string()))?;
        vmas.push(vma);
    }
    Ok(vmas)
}

/// Frames available to one process, handed out in a seeded random order so
/// that consecutive virtual pages land on scattered physical frames.
#[derive(Debug, Clone)]
pub struct FramePool {
    base: u64,
    count: u64,
    /// Remaining allocation order, consumed from the back.
    order: Vec<u64>,
    used: Vec<bool>,
    free: u64,
}

impl FramePool {
    pub fn new(base: u64, count: u64, seed: u64) -> Self {
        let mut pool = Self::identity(base, count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.order.shuffle(&mut rng);
        pool
    }

    /// Frames handed out in ascending order.
    pub fn identity(base: u64, count: u64) -> Self {
        Self {
            base,
            count,
            order: (base..base + count).rev().collect(),
            used: vec![false; count as usize],
            free: count,
        }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn capacity(&self) -> u64 {
        self.count
    }

    pub fn free_frames(&self) -> u64 {
        self.free
    }

    pub fn contains(&self, frame: u64) -> bool {
        (self.base..self.base + self.count).contains(&frame)
    }

    pub fn alloc(&mut self) -> Option<u64> {
        while let Some(frame) = self.order.pop() {
            let slot = &mut self.used[(frame - self.base) as usize];
            if !*slot {
                *slot = true;
                self.free -= 1;
                return Some(frame);
            }
        }
        None
    }

    /// Claims `n` physically consecutive frames whose first frame number is a
    /// multiple of `align`.
    pub fn alloc_contiguous(&mut self, n: u64, align: u64) -> Option<u64> {
        let align = align.max(1);
        let mut start = self.base.div_ceil(align) * align;
        while start + n <= self.base + self.count {
            let first = (start - self.base) as usize;
            let run = &mut self.used[first..first + n as usize];
            match run.iter().rposition(|u| *u) {
                None => {
                    run.iter_mut().for_each(|u| *u = true);
                    self.free -= n;
                    return Some(start);
                }
                Some(_) => start += align,
            }
        }
        None
    }
}

/// Sizing of the simulated physical memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmConfig {
    /// Frame number where the first process pool begins; lower frames are
    /// left to the kernel.
    pub base_frame: u64,
    /// Size of each process's frame pool.
    pub frames_per_process: u64,
    pub seed: u64,
}

impl Default for VmConfig {
    fn default() -> Self {
        Self {
            base_frame: 0x100,
            frames_per_process: 16 * 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct AddressSpace {
    vmas: Vec<Vma>,
    pages: HashMap<u64, u64>,
    shared: HashSet<u64>,
    pool: FramePool,
    next_mmap: u64,
}

impl AddressSpace {
    fn vma_index(&self, vaddr: u64) -> Option<usize> {
        self.vmas.iter().position(|v| v.contains(vaddr))
    }

    fn insert_vma(&mut self, vma: Vma) -> Result<(), VmError> {
        if let Some(clash) = self.vmas.iter().find(|v| v.overlaps(&vma)) {
            return Err(VmError::Layout(format!("{} overlaps {}", vma.name, clash.name)));
        }
        let at = self.vmas.partition_point(|v| v.start < vma.start);
        self.vmas.insert(at, vma);
        Ok(())
    }
}

/// One reverse-map hit for a physical frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mapping<'a> {
    pub pid: Pid,
    /// Virtual address of the page base.
    pub vaddr: u64,
    pub vma: &'a Vma,
}

#[derive(Debug, Clone)]
pub struct VirtualMemory {
    cfg: VmConfig,
    spaces: BTreeMap<Pid, AddressSpace>,
    /// frame -> sorted (pid, vpn) list
    rmap: HashMap<u64, Vec<(Pid, u64)>>,
    next_pool: u64,
}

/// Text, glibc and stack regions every spawned process starts with.
pub fn standard_layout() -> Vec<Vma> {
    vec![
        Vma::new("text", TEXT_BASE, TEXT_BASE + (64 << 10), "r-xp").unwrap(),
        Vma::new("glibc", GLIBC_BASE, GLIBC_BASE + (256 << 10), "r-xp").unwrap(),
        Vma::new("stack", STACK_TOP - (128 << 10), STACK_TOP, "rw-p").unwrap(),
    ]
}

impl VirtualMemory {
    pub fn new(cfg: VmConfig) -> Self {
        Self {
            cfg,
            spaces: BTreeMap::new(),
            rmap: HashMap::new(),
            next_pool: cfg.base_frame,
        }
    }

    pub fn config(&self) -> &VmConfig {
        &self.cfg
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
        self.spaces.keys().copied()
    }

    pub fn contains_pid(&self, pid: Pid) -> bool {
        self.spaces.contains_key(&pid)
    }

    /// Creates an address space with [`standard_layout`] and its own frame
    /// pool. Pools are carved in spawn order and aligned to huge pages.
    pub fn spawn(&mut self, pid: Pid) -> Result<(), VmError> {
        self.spawn_with_layout(pid, standard_layout())
    }

    pub fn spawn_with_layout(&mut self, pid: Pid, layout: Vec<Vma>) -> Result<(), VmError> {
        if pid == Pid::UNRESOLVED {
            return Err(VmError::ReservedPid);
        }
        if self.spaces.contains_key(&pid) {
            return Err(VmError::DuplicatePid(pid));
        }
        let base = self.next_pool.div_ceil(HUGE_PAGE_FRAMES) * HUGE_PAGE_FRAMES;
        let count = self.cfg.frames_per_process;
        self.next_pool = base + count;
        let seed = crate::rng::derive_seed(self.cfg.seed, &[0x706f_6f6c, pid.0]);
        let mut space = AddressSpace {
            vmas: Vec::new(),
            pages: HashMap::new(),
            shared: HashSet::new(),
            pool: FramePool::new(base, count, seed),
            next_mmap: MMAP_BASE,
        };
        for vma in layout {
            space.insert_vma(vma)?;
        }
        self.spaces.insert(pid, space);
        Ok(())
    }

    fn space(&self, pid: Pid) -> Result<&AddressSpace, VmError> {
        self.spaces.get(&pid).ok_or(VmError::UnknownPid(pid))
    }

    fn space_mut(&mut self, pid: Pid) -> Result<&mut AddressSpace, VmError> {
        self.spaces.get_mut(&pid).ok_or(VmError::UnknownPid(pid))
    }

    /// Creates a new region. `"heap"` is placed at the heap base; everything
    /// else goes to the mmap area. Huge regions are backed immediately by
    /// physically contiguous 2 MB frames.
    pub fn add_region(&mut self, pid: Pid, name: &str, size: u64, huge: bool) -> Result<Vma, VmError> {
        if size == 0 {
            return Err(VmError::Layout(format!("{name}: empty region")));
        }
        let space = self.space_mut(pid)?;
        let granule = if huge { HUGE_PAGE_SIZE } else { PAGE_SIZE };
        let size = size.div_ceil(granule) * granule;
        let start = if name == "heap" && !huge && !space.vmas.iter().any(|v| v.name == "heap") {
            HEAP_BASE
        } else {
            let start = space.next_mmap.div_ceil(HUGE_PAGE_SIZE) * HUGE_PAGE_SIZE;
            space.next_mmap = start + size;
            start
        };
        let vma = Vma::new(name, start, start + size, "rw-p")?;
        space.insert_vma(vma.clone())?;
        if huge {
            for chunk in 0..size / HUGE_PAGE_SIZE {
                self.map_huge(pid, start + chunk * HUGE_PAGE_SIZE)?;
            }
        }
        Ok(vma)
    }

    /// Maps the page containing `vaddr` on first touch. Touching an already
    /// mapped page returns its frame without a new mapping.
    pub fn map_page(&mut self, pid: Pid, vaddr: u64) -> Result<u64, VmError> {
        let space = self.space_mut(pid)?;
        let vpn = vaddr >> PAGE_SHIFT;
        if let Some(&frame) = space.pages.get(&vpn) {
            return Ok(frame);
        }
        if space.vma_index(vaddr).is_none() {
            return Err(VmError::SegFault { pid, vaddr });
        }
        let frame = space.pool.alloc().ok_or(VmError::OutOfMemory(pid))?;
        space.pages.insert(vpn, frame);
        self.rmap_insert(frame, pid, vpn);
        Ok(frame)
    }

    /// Maps the 2 MB huge page starting at `vaddr` onto 512 physically
    /// contiguous frames aligned to 2 MB. Returns the first frame.
    pub fn map_huge(&mut self, pid: Pid, vaddr: u64) -> Result<u64, VmError> {
        if vaddr % HUGE_PAGE_SIZE != 0 {
            return Err(VmError::Layout(format!("huge page at {vaddr:#x} not 2 MB aligned")));
        }
        let space = self.space_mut(pid)?;
        let Some(vma) = space.vma_index(vaddr).map(|i| &space.vmas[i]) else {
            return Err(VmError::SegFault { pid, vaddr });
        };
        if vma.end < vaddr + HUGE_PAGE_SIZE {
            return Err(VmError::Layout(format!("{} too small for a huge page", vma.name)));
        }
        let first_vpn = vaddr >> PAGE_SHIFT;
        if (0..HUGE_PAGE_FRAMES).any(|i| space.pages.contains_key(&(first_vpn + i))) {
            return Err(VmError::Layout(format!("huge page at {vaddr:#x} partially mapped")));
        }
        let base = space
            .pool
            .alloc_contiguous(HUGE_PAGE_FRAMES, HUGE_PAGE_FRAMES)
            .ok_or(VmError::OutOfMemory(pid))?;
        for i in 0..HUGE_PAGE_FRAMES {
            space.pages.insert(first_vpn + i, base + i);
        }
        for i in 0..HUGE_PAGE_FRAMES {
            self.rmap_insert(base + i, pid, first_vpn + i);
        }
        Ok(base)
    }

    /// Makes `dst_vaddr` in `dst` map the same frame as `src_vaddr` in `src`
    /// (mapping the source first if needed). Both pages are marked shared.
    pub fn share_page(&mut self, src: Pid, src_vaddr: u64, dst: Pid, dst_vaddr: u64) -> Result<u64, VmError> {
        let frame = self.map_page(src, src_vaddr)?;
        let dst_space = self.space_mut(dst)?;
        let dst_vpn = dst_vaddr >> PAGE_SHIFT;
        if dst_space.vma_index(dst_vaddr).is_none() {
            return Err(VmError::SegFault { pid: dst, vaddr: dst_vaddr });
        }
        if dst_space.pages.contains_key(&dst_vpn) {
            return Err(VmError::Layout(format!("pid {dst} page {dst_vaddr:#x} already mapped")));
        }
        dst_space.pages.insert(dst_vpn, frame);
        dst_space.shared.insert(dst_vpn);
        self.space_mut(src)?.shared.insert(src_vaddr >> PAGE_SHIFT);
        self.rmap_insert(frame, dst, dst_vpn);
        Ok(frame)
    }

    fn rmap_insert(&mut self, frame: u64, pid: Pid, vpn: u64) {
        let entries = self.rmap.entry(frame).or_default();
        let at = entries.partition_point(|e| *e < (pid, vpn));
        entries.insert(at, (pid, vpn));
    }

    pub fn translate(&self, pid: Pid, vaddr: u64) -> Result<u64, VmError> {
        let frame = self
            .space(pid)?
            .pages
            .get(&(vaddr >> PAGE_SHIFT))
            .ok_or(VmError::PageFault { pid, vaddr })?;
        Ok((frame << PAGE_SHIFT) | (vaddr & (PAGE_SIZE - 1)))
    }

    /// Every live mapping of `frame`, ordered by `(pid, vaddr)`. Empty for
    /// frames no process maps.
    pub fn resolve_frame(&self, frame: u64) -> Vec<Mapping<'_>> {
        let Some(entries) = self.rmap.get(&frame) else {
            return Vec::new();
        };
        entries
            .iter()
            .filter_map(|&(pid, vpn)| {
                let space = self.spaces.get(&pid)?;
                let vaddr = vpn << PAGE_SHIFT;
                let vma = &space.vmas[space.vma_index(vaddr)?];
                Some(Mapping { pid, vaddr, vma })
            })
            .collect()
    }

    /// The lexicographically smallest `(pid, page vaddr)` mapping `frame`.
    pub fn resolve_first(&self, frame: u64) -> Option<(Pid, u64)> {
        self.rmap
            .get(&frame)
            .and_then(|e| e.first())
            .map(|&(pid, vpn)| (pid, vpn << PAGE_SHIFT))
    }

    /// Current VMA list of `pid`, ordered by start address.
    pub fn record_layout(&self, pid: Pid) -> Result<Vec<Vma>, VmError> {
        Ok(self.space(pid)?.vmas.clone())
    }

    pub fn find_vma(&self, pid: Pid, name: &str) -> Result<Option<&Vma>, VmError> {
        Ok(self.space(pid)?.vmas.iter().find(|v| v.name == name))
    }

    pub fn mapped_pages(&self, pid: Pid) -> Result<usize, VmError> {
        Ok(self.space(pid)?.pages.len())
    }

    /// Full cross-walk of page tables against the reverse map.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut forward = 0usize;
        for (&pid, space) in &self.spaces {
            for (&vpn, &frame) in &space.pages {
                forward += 1;
                if space.vma_index(vpn << PAGE_SHIFT).is_none() {
                    return Err(format!("pid {pid} maps vpn {vpn:#x} outside every VMA"));
                }
                let entries = self.rmap.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
                if !entries.contains(&(pid, vpn)) {
                    return Err(format!("frame {frame:#x} missing reverse entry for pid {pid}"));
                }
                if entries.len() > 1 && !space.shared.contains(&vpn) {
                    return Err(format!("private frame {frame:#x} mapped {} times", entries.len()));
                }
            }
        }
        let reverse: usize = self.rmap.values().map(Vec::len).sum();
        if reverse != forward {
            return Err(format!("{reverse} reverse entries for {forward} page-table entries"));
        }
        for (&frame, entries) in &self.rmap {
            for &(pid, vpn) in entries {
                let fwd = self.spaces.get(&pid).and_then(|s| s.pages.get(&vpn));
                if fwd != Some(&frame) {
                    return Err(format!("stale reverse entry {frame:#x} -> pid {pid} vpn {vpn:#x}"));
                }
            }
        }
        Ok(())
    }
}
