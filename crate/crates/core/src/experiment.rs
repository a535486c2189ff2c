//! Standard measurement protocols built from the engine, the shutter and the
//! analyses. Trial-based protocols run each trial in a fresh world seeded
//! from `(seed, trial index)`, execute trials in parallel and merge results
//! by index, so output does not depend on the thread count.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::analysis::{
    active_set_excess, pearson, replacement_density, resident_count, reused_set_eviction, set_decision, Profile,
    WayDecision, WayFrequency,
};
use crate::cache::{CacheGeometry, FlushStyle};
use crate::rng::derive_seed;
use crate::shutter::{pollution, FnSink, ShutterConfig, ShutterError, Snapshot, SnapshotRecord, SnapshotSink, Trigger};
use crate::vm::{Pid, VmConfig, VirtualMemory};
use crate::workload::{
    build_benchmark, measure_slowdown, run, set0_offsets, Activation, Benchmark, NoTrigger, Program,
    RunOptions, RunResult, SchedPolicy, Scheduler, TaskSpec, TriggerHook, WorkloadError, World, WorldSetup,
    WorldView, REPL_REGION,
};

/// Pid of the process under observation in the single-probe protocols.
pub const PROBE_PID: Pid = Pid(1);
/// Pid of the process that pre-fills set 0 with foreign lines.
pub const FILLER_PID: Pid = Pid(2);

/// Runs `tasks` with a shutter attached and returns the run result together
/// with the sink.
pub fn run_captured<S: SnapshotSink>(
    world: &mut World,
    tasks: Vec<TaskSpec>,
    sched: &Scheduler,
    shutter: ShutterConfig,
    activation: Activation,
    sink: S,
    opts: &RunOptions,
) -> Result<(RunResult, S), WorkloadError> {
    let mut trigger = Trigger::new(shutter, activation, sink);
    let result = run(world, tasks, sched, &mut trigger, opts)?;
    Ok((result, trigger.into_sink()))
}

/// Virtual addresses of the probe's set-0 lines.
fn probe_targets(vm: &VirtualMemory, geom: &CacheGeometry) -> Result<Vec<u64>, WorkloadError> {
    let base = vm
        .find_vma(PROBE_PID, REPL_REGION)?
        .ok_or_else(|| WorkloadError::Config("probe region missing after run".into()))?
        .start;
    Ok(set0_offsets(geom).into_iter().map(|o| base + o).collect())
}

fn probe_tasks(probe: Program, prefill: bool, geom: &CacheGeometry) -> Result<Vec<TaskSpec>, WorkloadError> {
    let mut tasks = Vec::new();
    if prefill {
        let filler = build_benchmark(&Benchmark::Repl { iterations: 1, signal: false }, geom)?;
        tasks.push(TaskSpec::new(FILLER_PID, filler, 0, 2));
    }
    tasks.push(TaskSpec::new(PROBE_PID, probe, 0, 1));
    Ok(tasks)
}

fn probe_shutter(reserved: u64) -> ShutterConfig {
    ShutterConfig {
        reserved_snapshots: Some(reserved),
        ..ShutterConfig::transparent()
    }
}

/// Frame pools just large enough for the probe's huge buffer keep trials cheap.
pub fn probe_setup(geometry: CacheGeometry, policy: crate::cache::ReplacementPolicy) -> WorldSetup {
    WorldSetup {
        geometry,
        policy,
        vm: VmConfig {
            frames_per_process: 1024,
            ..VmConfig::default()
        },
        ..WorldSetup::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplDensityConfig {
    pub setup: WorldSetup,
    pub iterations: u64,
    pub trials: u64,
    pub seed: u64,
    /// Fill set 0 with another process's lines before the probe starts.
    pub prefill: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplDensityOutcome {
    /// Resident probe lines per trial, in trial order.
    pub ks: Vec<u32>,
    /// `density[k]` for `k` in `0..=ways`.
    pub density: Vec<f64>,
    pub mean: f64,
}

/// One trial: the probe touches its set-0 lines `iterations` times and
/// signals; the count of those lines in the resulting snapshot is returned.
pub fn repl_trial(setup: &WorldSetup, iterations: u64, prefill: bool) -> Result<u32, WorkloadError> {
    let mut world = setup.build()?;
    let geom = setup.geometry;
    let probe = build_benchmark(&Benchmark::Repl { iterations, signal: true }, &geom)?;
    let sched = Scheduler::single_core(SchedPolicy::FixedPriority);
    let (_, snaps) = run_captured(
        &mut world,
        probe_tasks(probe, prefill, &geom)?,
        &sched,
        probe_shutter(1),
        Activation::Event,
        Vec::new(),
        &RunOptions::default(),
    )?;
    let targets: HashSet<u64> = probe_targets(&world.vm, &geom)?.into_iter().collect();
    let snap = snaps
        .first()
        .ok_or_else(|| WorkloadError::Trigger("probe did not produce a snapshot".into()))?;
    Ok(resident_count(snap, PROBE_PID, &targets))
}

pub fn repl_density(cfg: &ReplDensityConfig) -> Result<ReplDensityOutcome, WorkloadError> {
    if cfg.trials == 0 || cfg.iterations == 0 {
        return Err(WorkloadError::Config("trials and iterations must be positive".into()));
    }
    let ks = (0..cfg.trials)
        .into_par_iter()
        .map(|t| repl_trial(&cfg.setup.reseeded(derive_seed(cfg.seed, &[t])), cfg.iterations, cfg.prefill))
        .collect::<Result<Vec<u32>, _>>()?;
    let ways = cfg.setup.geometry.ways();
    let density = replacement_density(&ks, ways).expect("trials > 0");
    let mean = ks.iter().map(|&k| f64::from(k)).sum::<f64>() / ks.len() as f64;
    Ok(ReplDensityOutcome { ks, density, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WayFrequencyConfig {
    pub setup: WorldSetup,
    pub runs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WayFrequencyOutcome {
    /// Decisions of each run, in run order.
    pub runs: Vec<Vec<WayDecision>>,
    pub frequency: WayFrequency,
}

/// One run of the step protocol: a baseline snapshot, then one snapshot after
/// each single probe access. Returns one decision per access.
pub fn way_trial(setup: &WorldSetup) -> Result<Vec<WayDecision>, WorkloadError> {
    let mut world = setup.build()?;
    let geom = setup.geometry;
    let probe = build_benchmark(&Benchmark::ReplStep, &geom)?;
    let sched = Scheduler::single_core(SchedPolicy::FixedPriority);
    let steps = u64::from(geom.ways());
    // Only set 0 matters; keeping just its records avoids holding every
    // snapshot of the run.
    let mut sets: Vec<Vec<SnapshotRecord>> = Vec::new();
    run_captured(
        &mut world,
        probe_tasks(probe, true, &geom)?,
        &sched,
        probe_shutter(steps + 1),
        Activation::Event,
        FnSink(|s: Snapshot| {
            sets.push(s.set(0).to_vec());
            Ok(())
        }),
        &RunOptions::default(),
    )?;
    if sets.len() as u64 != steps + 1 {
        return Err(WorkloadError::Trigger(format!(
            "expected {} snapshots, got {}",
            steps + 1,
            sets.len()
        )));
    }
    let targets = probe_targets(&world.vm, &geom)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, &a)| set_decision(&sets[i], &sets[i + 1], SnapshotRecord::new(PROBE_PID, a)))
        .collect())
}

pub fn way_frequency(cfg: &WayFrequencyConfig) -> Result<WayFrequencyOutcome, WorkloadError> {
    if cfg.runs == 0 {
        return Err(WorkloadError::Config("runs must be positive".into()));
    }
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| way_trial(&cfg.setup.reseeded(derive_seed(cfg.seed, &[r]))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut frequency = WayFrequency::new(cfg.setup.geometry.ways());
    for d in runs.iter().flatten() {
        frequency.add(d);
    }
    Ok(WayFrequencyOutcome { runs, frequency })
}

/// Builds a [`Profile`] incrementally, keeping only the previous line set.
#[derive(Debug, Clone)]
pub struct ProfileSink {
    pub pid: Pid,
    pub profile: Profile,
    prev: HashSet<u64>,
}

impl ProfileSink {
    pub fn new(pid: Pid) -> Self {
        Self {
            pid,
            profile: Profile {
                pid,
                active: Vec::new(),
                reused: Vec::new(),
            },
            prev: HashSet::new(),
        }
    }
}

impl SnapshotSink for ProfileSink {
    fn accept(&mut self, snap: Snapshot) -> Result<(), ShutterError> {
        if !snap.flags.flush {
            return Err(ShutterError::Geometry(format!(
                "snapshot {} was not taken in flush mode",
                snap.sequence
            )));
        }
        let lines = snap.lines_of(self.pid);
        self.profile.active.push(lines.len() as u64);
        self.profile.reused.push(lines.intersection(&self.prev).count() as u64);
        self.prev = lines;
        Ok(())
    }
}

/// Flush-mode configuration used for working-set profiling.
pub fn profiling_shutter() -> ShutterConfig {
    ShutterConfig {
        flush: true,
        sync: true,
        resolve: true,
        flush_style: FlushStyle::HardInvalidate,
        ..ShutterConfig::default()
    }
}

/// Active/reused profile of `program` running alone, sampled every `period`
/// accesses.
pub fn isolation_profile(setup: &WorldSetup, program: &Program, period: u64) -> Result<Profile, WorkloadError> {
    let mut world = setup.build()?;
    let sched = Scheduler::single_core(SchedPolicy::FixedPriority);
    let (_, sink) = run_captured(
        &mut world,
        vec![TaskSpec::new(PROBE_PID, program.clone(), 0, 1)],
        &sched,
        profiling_shutter(),
        Activation::Periodic { period },
        ProfileSink::new(PROBE_PID),
        &RunOptions::default(),
    )?;
    Ok(sink.profile)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceConfig {
    pub setup: WorldSetup,
    /// Named workloads; every one is used as an interferer.
    pub workloads: Vec<(String, Program)>,
    /// Indices into `workloads` of the applications under analysis.
    pub observed: Vec<usize>,
    pub period: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub observed: String,
    pub interfering: String,
    pub ase: f64,
    pub rse: f64,
    pub slowdown: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceOutcome {
    /// Isolation profiles in workload order.
    pub profiles: Vec<(String, Profile)>,
    pub pairs: Vec<PairMetrics>,
    pub r_ase: f64,
    pub r_rse: f64,
}

pub fn interference(cfg: &InterferenceConfig) -> Result<InterferenceOutcome, WorkloadError> {
    if cfg.workloads.is_empty() || cfg.observed.is_empty() {
        return Err(WorkloadError::Config("interference needs workloads and observed entries".into()));
    }
    if let Some(&bad) = cfg.observed.iter().find(|&&i| i >= cfg.workloads.len()) {
        return Err(WorkloadError::Config(format!("observed index {bad} out of range")));
    }
    let profs = cfg
        .workloads
        .par_iter()
        .map(|(_, p)| isolation_profile(&cfg.setup, p, cfg.period))
        .collect::<Result<Vec<_>, _>>()?;
    let grid: Vec<(usize, usize)> = cfg
        .observed
        .iter()
        .flat_map(|&o| (0..cfg.workloads.len()).map(move |i| (o, i)))
        .collect();
    let geom = cfg.setup.geometry;
    let pairs = grid
        .par_iter()
        .map(|&(o, i)| {
            let metric = |e| WorkloadError::Config(format!("{e}"));
            Ok(PairMetrics {
                observed: cfg.workloads[o].0.clone(),
                interfering: cfg.workloads[i].0.clone(),
                ase: active_set_excess(&profs[o], &profs[i], &geom).map_err(metric)?,
                rse: reused_set_eviction(&profs[o], &profs[i], &geom).map_err(metric)?,
                slowdown: measure_slowdown(&cfg.setup, &cfg.workloads[o].1, &cfg.workloads[i].1)?,
            })
        })
        .collect::<Result<Vec<_>, WorkloadError>>()?;
    let slow: Vec<f64> = pairs.iter().map(|p| p.slowdown).collect();
    let corr = |xs: Vec<f64>| pearson(&xs, &slow).map_err(|e| WorkloadError::Config(e.to_string()));
    let r_ase = corr(pairs.iter().map(|p| p.ase).collect())?;
    let r_rse = corr(pairs.iter().map(|p| p.rse).collect())?;
    Ok(InterferenceOutcome {
        profiles: cfg.workloads.iter().map(|(n, _)| n.clone()).zip(profs).collect(),
        pairs,
        r_ase,
        r_rse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollutionOutcome {
    pub first: Snapshot,
    pub second: Snapshot,
    pub pollution: f64,
}

/// Runs `lead` to completion, then takes two snapshots back to back. The
/// first snapshot's post-processing lands between the two.
pub fn pollution_protocol(
    setup: &WorldSetup,
    lead: &Program,
    shutter: ShutterConfig,
) -> Result<PollutionOutcome, WorkloadError> {
    let mut world = setup.build()?;
    let sched = Scheduler::single_core(SchedPolicy::FixedPriority);
    let lead_run = run(
        &mut world,
        vec![TaskSpec::new(PROBE_PID, lead.clone(), 0, 1)],
        &sched,
        &mut NoTrigger,
        &RunOptions::default(),
    )?;
    let mut trigger = Trigger::new(shutter, Activation::Never, Vec::new());
    let observed = [PROBE_PID];
    for _ in 0..2 {
        let view = WorldView {
            cache: &world.cache,
            vm: &world.vm,
            now: lead_run.total_accesses,
            observed: &observed,
        };
        let post = trigger.capture(&view)?;
        post.apply(&mut world.cache);
    }
    let mut snaps = trigger.into_sink();
    let second = snaps.pop().expect("two captures");
    let first = snaps.pop().expect("two captures");
    let pollution = pollution(&first, &second).map_err(|e| WorkloadError::Trigger(e.to_string()))?;
    Ok(PollutionOutcome {
        first,
        second,
        pollution,
    })
}
