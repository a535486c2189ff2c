use std::collections::BTreeMap;

use super::program::{Compiled, Cursor, Step};
use super::{Program, WorkloadError};
use crate::cache::{CacheError, CacheGeometry, CacheState, ReplacementPolicy};
use crate::vm::{Pid, VirtualMemory, VmConfig, VmError};

/// Converts hit/miss counts into simulated cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingModel {
    pub hit_cost: u64,
    pub miss_cost: u64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            hit_cost: 1,
            miss_cost: 30,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.hit_cost >= 1 && self.miss_cost > self.hit_cost {
            Ok(())
        } else {
            Err(WorkloadError::Config(format!(
                "timing requires miss_cost > hit_cost >= 1 (got {}/{})",
                self.miss_cost, self.hit_cost
            )))
        }
    }

    pub fn cycles(&self, hits: u64, misses: u64) -> u64 {
        hits * self.hit_cost + misses * self.miss_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedPolicy {
    /// Round-robin over runnable tasks of a core, `quantum` accesses each.
    CfsLike { quantum: u64 },
    /// Highest priority runnable task runs until it completes.
    FixedPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduler {
    pub policy: SchedPolicy,
    pub cores: usize,
}

impl Scheduler {
    pub fn single_core(policy: SchedPolicy) -> Self {
        Self { policy, cores: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub pid: Pid,
    pub program: Program,
    pub core: usize,
    /// Larger runs first under [`SchedPolicy::FixedPriority`].
    pub priority: i64,
}

impl TaskSpec {
    pub fn new(pid: Pid, program: Program, core: usize, priority: i64) -> Self {
        Self {
            pid,
            program,
            core,
            priority,
        }
    }
}

/// When the trigger fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Never,
    /// Every `period` rounds; a round gives each core one access slot.
    Periodic { period: u64 },
    /// On every `SignalTrigger` executed by a task.
    Event,
}

/// Cache traffic the trigger generates after a capture (copying and
/// post-processing the snapshot in cacheable memory).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PostProcessing {
    pub trash_lines: u64,
    pub invalidate: bool,
}

impl PostProcessing {
    /// Applies the traffic directly, as a synchronous trigger does.
    pub fn apply(&self, cache: &mut CacheState) {
        cache.trash(self.trash_lines);
        if self.invalidate {
            cache.hard_invalidate();
        }
    }
}

/// Read-only view of the quiesced system handed to [`TriggerHook::capture`].
pub struct WorldView<'a> {
    pub cache: &'a CacheState,
    pub vm: &'a VirtualMemory,
    /// Global count of task accesses so far.
    pub now: u64,
    pub observed: &'a [Pid],
}

pub trait TriggerHook {
    fn activation(&self) -> Activation;

    /// Synchronous triggers pause every observed task from activation until
    /// post-processing completes.
    fn synchronous(&self) -> bool;

    /// Core the trigger itself runs on in asynchronous mode.
    fn trigger_core(&self) -> usize {
        0
    }

    /// Rounds between activation and world quiesce in asynchronous mode,
    /// during which the other cores keep running.
    fn quiesce_delay(&self) -> u64 {
        0
    }

    fn capture(&mut self, world: &WorldView<'_>) -> Result<PostProcessing, WorkloadError>;
}

/// A hook that never fires.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoTrigger;

impl TriggerHook for NoTrigger {
    fn activation(&self) -> Activation {
        Activation::Never
    }

    fn synchronous(&self) -> bool {
        true
    }

    fn capture(&mut self, _: &WorldView<'_>) -> Result<PostProcessing, WorkloadError> {
        Ok(PostProcessing::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ContextSwitch { core: usize, from: Option<Pid>, to: Pid },
    /// A runnable task lost its core to another task at quantum expiry.
    Preemption { core: usize, pid: Pid },
    /// The asynchronous trigger took over a core from a running task.
    TriggerPreemption { core: usize, pid: Pid },
    PageFault { pid: Pid, vaddr: u64 },
    SegFault { pid: Pid, vaddr: u64 },
    Signal { pid: Pid },
    TriggerActivated,
    Quiesced,
    Captured,
    Paused,
    Resumed,
    Completed { pid: Pid },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Global access count at the time of the event.
    pub time: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PidStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub cycles: u64,
    pub page_faults: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: u64,
    pub pid: Pid,
    pub vaddr: u64,
    pub paddr: u64,
    pub write: bool,
    pub hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunResult {
    pub per_pid: BTreeMap<Pid, PidStats>,
    pub events: Vec<Event>,
    pub total_accesses: u64,
    pub rounds: u64,
    pub captures: u64,
    pub completion_order: Vec<Pid>,
    pub trace: Vec<TraceEntry>,
}

impl RunResult {
    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn preemptions(&self) -> usize {
        self.count(|k| matches!(k, EventKind::Preemption { .. }))
    }

    pub fn context_switches(&self) -> usize {
        self.count(|k| matches!(k, EventKind::ContextSwitch { from: Some(_), .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum StopWhen {
    #[default]
    AllFinished,
    /// Stop as soon as every listed pid has finished; others may still be running.
    Finished(Vec<Pid>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub stop: StopWhen,
    pub record_trace: bool,
    /// Abort with an error after this many rounds.
    pub max_rounds: Option<u64>,
}

/// Everything a run mutates.
#[derive(Debug, Clone)]
pub struct World {
    pub cache: CacheState,
    pub vm: VirtualMemory,
    pub timing: TimingModel,
}

/// Recipe for a fresh [`World`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSetup {
    pub geometry: CacheGeometry,
    pub policy: ReplacementPolicy,
    pub vm: VmConfig,
    pub timing: TimingModel,
}

impl Default for WorldSetup {
    fn default() -> Self {
        Self {
            geometry: CacheGeometry::default(),
            policy: ReplacementPolicy::TrueRandom { seed: 0 },
            vm: VmConfig::default(),
            timing: TimingModel::default(),
        }
    }
}

impl WorldSetup {
    pub fn build(&self) -> Result<World, WorkloadError> {
        self.timing.validate()?;
        Ok(World {
            cache: CacheState::new(self.geometry, self.policy.clone())?,
            vm: VirtualMemory::new(self.vm),
            timing: self.timing,
        })
    }

    /// Same setup with the policy and frame-pool seeds derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            policy: self.policy.reseeded(crate::rng::derive_seed(seed, &[0x7265_706c])),
            vm: VmConfig {
                seed: crate::rng::derive_seed(seed, &[0x766d]),
                ..self.vm
            },
            ..self.clone()
        }
    }
}

struct TaskRun {
    pid: Pid,
    code: Compiled,
    cursor: Cursor,
    bases: Vec<u64>,
    priority: i64,
    finished: bool,
    stats: PidStats,
}

#[derive(Default)]
struct CoreRun {
    tasks: Vec<usize>,
    current: Option<usize>,
    slice: u64,
}

enum TriggerState {
    Idle,
    Arming { remaining: u64 },
    Draining { remaining: u64, invalidate: bool },
}

enum Slot {
    Accessed,
    Signalled,
    Idle,
}

struct Engine<'w, 'h> {
    world: &'w mut World,
    hook: &'h mut dyn TriggerHook,
    sched: Scheduler,
    tasks: Vec<TaskRun>,
    cores: Vec<CoreRun>,
    observed: Vec<Pid>,
    result: RunResult,
    record_trace: bool,
    trigger: TriggerState,
    line_size: u64,
}

/// Runs `tasks` to completion (or until `opts.stop` is met) on the simulated
/// cores. Cores take turns one access at a time; the trigger hook fires per
/// its [`Activation`].
pub fn run(
    world: &mut World,
    tasks: Vec<TaskSpec>,
    sched: &Scheduler,
    hook: &mut dyn TriggerHook,
    opts: &RunOptions,
) -> Result<RunResult, WorkloadError> {
    if sched.cores == 0 {
        return Err(WorkloadError::Config("at least one core is required".into()));
    }
    if let SchedPolicy::CfsLike { quantum: 0 } = sched.policy {
        return Err(WorkloadError::Config("quantum must be at least 1".into()));
    }
    world.timing.validate()?;
    let line_size = world.cache.geometry().line_size();
    let mut pids: Vec<Pid> = tasks.iter().map(|t| t.pid).collect();
    pids.sort_unstable();
    if pids.windows(2).any(|w| w[0] == w[1]) {
        return Err(WorkloadError::Config("duplicate pid".into()));
    }
    if sched.policy == SchedPolicy::FixedPriority {
        let mut prios: Vec<(usize, i64)> = tasks.iter().map(|t| (t.core, t.priority)).collect();
        prios.sort_unstable();
        if prios.windows(2).any(|w| w[0] == w[1]) {
            return Err(WorkloadError::Config("fixed-priority tasks on one core need unique priorities".into()));
        }
    }

    let mut cores: Vec<CoreRun> = (0..sched.cores).map(|_| CoreRun::default()).collect();
    let mut runs = Vec::with_capacity(tasks.len());
    for (i, t) in tasks.iter().enumerate() {
        let core = cores
            .get_mut(t.core)
            .ok_or_else(|| WorkloadError::Config(format!("pid {} pinned to unknown core {}", t.pid, t.core)))?;
        core.tasks.push(i);
        let code = t.program.compile(line_size)?;
        world.vm.spawn(t.pid)?;
        let mut bases = vec![0; code.regions.len()];
        for (slot, name) in bases.iter_mut().zip(&code.regions) {
            if let Some(v) = world.vm.find_vma(t.pid, name)? {
                *slot = v.start;
            }
        }
        runs.push(TaskRun {
            pid: t.pid,
            code,
            cursor: Cursor::default(),
            bases,
            priority: t.priority,
            finished: false,
            stats: PidStats::default(),
        });
    }

    let mut engine = Engine {
        world,
        hook,
        sched: *sched,
        tasks: runs,
        cores,
        observed: tasks.iter().map(|t| t.pid).collect(),
        result: RunResult::default(),
        record_trace: opts.record_trace,
        trigger: TriggerState::Idle,
        line_size,
    };
    engine.run_loop(opts)?;
    let mut result = engine.result;
    for t in &engine.tasks {
        let mut stats = t.stats;
        stats.cycles = engine.world.timing.cycles(stats.hits, stats.misses);
        result.per_pid.insert(t.pid, stats);
    }
    Ok(result)
}

impl Engine<'_, '_> {
    fn log(&mut self, kind: EventKind) {
        self.result.events.push(Event {
            time: self.result.total_accesses,
            kind,
        });
    }

    fn stop_reached(&self, stop: &StopWhen) -> bool {
        match stop {
            StopWhen::AllFinished => self.tasks.iter().all(|t| t.finished),
            StopWhen::Finished(pids) => pids
                .iter()
                .all(|p| self.tasks.iter().find(|t| t.pid == *p).is_none_or(|t| t.finished)),
        }
    }

    fn run_loop(&mut self, opts: &RunOptions) -> Result<(), WorkloadError> {
        let activation = self.hook.activation();
        let mut since_fire = 0u64;
        loop {
            if self.stop_reached(&opts.stop) && matches!(self.trigger, TriggerState::Idle) {
                return Ok(());
            }
            if let Some(max) = opts.max_rounds {
                if self.result.rounds >= max {
                    return Err(WorkloadError::Config(format!("run exceeded {max} rounds")));
                }
            }
            let mut busy = false;
            for core in 0..self.cores.len() {
                if self.trigger_slot(core)? {
                    busy = true;
                    continue;
                }
                loop {
                    match self.task_slot(core)? {
                        Slot::Accessed => {
                            busy = true;
                            break;
                        }
                        Slot::Signalled => {
                            if activation == Activation::Event {
                                self.fire()?;
                                if !self.hook.synchronous() && self.trigger_core_index() == core {
                                    busy = true;
                                    break;
                                }
                            }
                        }
                        Slot::Idle => break,
                    }
                }
            }
            if !busy && matches!(self.trigger, TriggerState::Idle) {
                return Ok(());
            }
            self.result.rounds += 1;
            since_fire += 1;
            if let Activation::Periodic { period } = activation {
                if since_fire >= period.max(1) && matches!(self.trigger, TriggerState::Idle) {
                    since_fire = 0;
                    self.fire()?;
                }
            }
        }
    }

    fn trigger_core_index(&self) -> usize {
        self.hook.trigger_core().min(self.cores.len() - 1)
    }

    fn fire(&mut self) -> Result<(), WorkloadError> {
        if !matches!(self.trigger, TriggerState::Idle) {
            return Ok(());
        }
        self.log(EventKind::TriggerActivated);
        if self.hook.synchronous() {
            self.log(EventKind::Paused);
            let post = self.capture()?;
            post.apply(&mut self.world.cache);
            self.log(EventKind::Resumed);
        } else {
            let core = self.trigger_core_index();
            if let Some(cur) = self.cores[core].current {
                if !self.tasks[cur].finished {
                    let pid = self.tasks[cur].pid;
                    self.log(EventKind::TriggerPreemption { core, pid });
                }
            }
            let delay = self.hook.quiesce_delay();
            self.trigger = TriggerState::Arming { remaining: delay };
            if delay == 0 {
                self.trigger_slot(core)?;
            }
        }
        Ok(())
    }

    fn capture(&mut self) -> Result<PostProcessing, WorkloadError> {
        self.log(EventKind::Quiesced);
        let view = WorldView {
            cache: &self.world.cache,
            vm: &self.world.vm,
            now: self.result.total_accesses,
            observed: &self.observed,
        };
        let post = self.hook.capture(&view)?;
        self.result.captures += 1;
        self.log(EventKind::Captured);
        Ok(post)
    }

    /// Advances the asynchronous trigger if it owns `core`. Returns whether
    /// the slot was consumed.
    fn trigger_slot(&mut self, core: usize) -> Result<bool, WorkloadError> {
        if core != self.trigger_core_index() {
            return Ok(false);
        }
        match self.trigger {
            TriggerState::Idle => Ok(false),
            TriggerState::Arming { remaining } if remaining > 0 => {
                self.trigger = TriggerState::Arming { remaining: remaining - 1 };
                Ok(true)
            }
            TriggerState::Arming { .. } => {
                let post = self.capture()?;
                self.trigger = TriggerState::Draining {
                    remaining: post.trash_lines,
                    invalidate: post.invalidate,
                };
                self.drain_step();
                Ok(true)
            }
            TriggerState::Draining { .. } => {
                self.drain_step();
                Ok(true)
            }
        }
    }

    fn drain_step(&mut self) {
        if let TriggerState::Draining { remaining, invalidate } = self.trigger {
            if remaining > 0 {
                self.world.cache.trash_one();
            }
            if remaining <= 1 {
                if invalidate {
                    self.world.cache.hard_invalidate();
                }
                self.trigger = TriggerState::Idle;
            } else {
                self.trigger = TriggerState::Draining {
                    remaining: remaining - 1,
                    invalidate,
                };
            }
        }
    }

    fn pick(&mut self, core: usize) -> Option<usize> {
        let c = &self.cores[core];
        let runnable = |i: &usize| !self.tasks[*i].finished;
        let chosen = match self.sched.policy {
            SchedPolicy::FixedPriority => match c.current {
                Some(cur) if !self.tasks[cur].finished => Some(cur),
                _ => c.tasks.iter().copied().filter(runnable).max_by_key(|&i| self.tasks[i].priority),
            },
            SchedPolicy::CfsLike { quantum } => match c.current {
                Some(cur) if !self.tasks[cur].finished && c.slice < quantum => Some(cur),
                cur => {
                    let pos = cur.and_then(|cur| c.tasks.iter().position(|&i| i == cur));
                    let n = c.tasks.len();
                    let start = pos.map_or(0, |p| p + 1);
                    (0..n).map(|k| c.tasks[(start + k) % n]).find(runnable)
                }
            },
        }?;
        let prev = self.cores[core].current;
        if prev != Some(chosen) {
            if let Some(p) = prev {
                if !self.tasks[p].finished {
                    let pid = self.tasks[p].pid;
                    self.log(EventKind::Preemption { core, pid });
                }
            }
            let to = self.tasks[chosen].pid;
            self.log(EventKind::ContextSwitch {
                core,
                from: prev.map(|p| self.tasks[p].pid),
                to,
            });
            self.cores[core].current = Some(chosen);
            self.cores[core].slice = 0;
        } else if self.cores[core].slice >= self.quantum() {
            self.cores[core].slice = 0;
        }
        Some(chosen)
    }

    fn quantum(&self) -> u64 {
        match self.sched.policy {
            SchedPolicy::CfsLike { quantum } => quantum,
            SchedPolicy::FixedPriority => u64::MAX,
        }
    }

    fn task_slot(&mut self, core: usize) -> Result<Slot, WorkloadError> {
        loop {
            let Some(ti) = self.pick(core) else {
                return Ok(Slot::Idle);
            };
            let step = {
                let t = &mut self.tasks[ti];
                t.cursor.next(&t.code, self.line_size)
            };
            let pid = self.tasks[ti].pid;
            match step {
                Step::Done => self.finish(ti),
                Step::Alloc { region, size, huge } => {
                    let name = self.tasks[ti].code.regions[region].clone();
                    let vma = self.world.vm.add_region(pid, &name, size, huge)?;
                    self.tasks[ti].bases[region] = vma.start;
                }
                Step::Signal => {
                    self.log(EventKind::Signal { pid });
                    return Ok(Slot::Signalled);
                }
                Step::Access { region, offset, write } => {
                    let vaddr = self.tasks[ti].bases[region] + offset;
                    let paddr = match self.world.vm.translate(pid, vaddr) {
                        Ok(p) => p,
                        Err(VmError::PageFault { .. }) => match self.world.vm.map_page(pid, vaddr) {
                            Ok(_) => {
                                self.tasks[ti].stats.page_faults += 1;
                                self.log(EventKind::PageFault { pid, vaddr });
                                self.world.vm.translate(pid, vaddr)?
                            }
                            Err(VmError::SegFault { .. }) => {
                                self.log(EventKind::SegFault { pid, vaddr });
                                self.finish(ti);
                                continue;
                            }
                            Err(e) => return Err(e.into()),
                        },
                        Err(e) => return Err(e.into()),
                    };
                    let res = self.world.cache.access(paddr, write).map_err(|e| match e {
                        CacheError::Uncached(a) => {
                            WorkloadError::Config(format!("pid {pid} mapped non-cacheable address {a:#x}"))
                        }
                        other => other.into(),
                    })?;
                    let t = &mut self.tasks[ti];
                    t.stats.accesses += 1;
                    if res.hit {
                        t.stats.hits += 1;
                    } else {
                        t.stats.misses += 1;
                    }
                    if self.record_trace {
                        self.result.trace.push(TraceEntry {
                            time: self.result.total_accesses,
                            pid,
                            vaddr,
                            paddr,
                            write,
                            hit: res.hit,
                        });
                    }
                    self.result.total_accesses += 1;
                    self.cores[core].slice += 1;
                    return Ok(Slot::Accessed);
                }
            }
        }
    }

    fn finish(&mut self, ti: usize) {
        if !self.tasks[ti].finished {
            self.tasks[ti].finished = true;
            let pid = self.tasks[ti].pid;
            self.result.completion_order.push(pid);
            self.log(EventKind::Completed { pid });
        }
    }
}

/// Slowdown of `observed` when `interfering` runs on a second core, as the
/// ratio of the observed task's simulated cycles with and without the
/// interferer. The interferer repeats until the observed task finishes.
pub fn measure_slowdown(
    setup: &WorldSetup,
    observed: &Program,
    interfering: &Program,
) -> Result<f64, WorkloadError> {
    let obs_pid = Pid(1);
    let sched = Scheduler {
        policy: SchedPolicy::FixedPriority,
        cores: 2,
    };
    let alone = {
        let mut world = setup.build()?;
        let tasks = vec![TaskSpec::new(obs_pid, observed.clone(), 0, 1)];
        run(&mut world, tasks, &sched, &mut NoTrigger, &RunOptions::default())?
    };
    let shared = {
        let mut world = setup.build()?;
        let tasks = vec![
            TaskSpec::new(obs_pid, observed.clone(), 0, 1),
            TaskSpec::new(Pid(2), interfering.repeat_forever(), 1, 0),
        ];
        let opts = RunOptions {
            stop: StopWhen::Finished(vec![obs_pid]),
            ..RunOptions::default()
        };
        run(&mut world, tasks, &sched, &mut NoTrigger, &opts)?
    };
    let base = alone.per_pid[&obs_pid].cycles;
    if base == 0 {
        return Ok(1.0);
    }
    Ok(shared.per_pid[&obs_pid].cycles as f64 / base as f64)
}
