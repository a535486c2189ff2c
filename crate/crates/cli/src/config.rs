//! Experiment configuration files.
//!
//! TOML with unit-bearing sizes (`"512KB"`, `"2MB"`). Unknown keys are
//! rejected everywhere. [`ExperimentConfig::resolve`] turns the parsed file
//! into core types and runs every semantic check before anything is
//! simulated.

use std::fmt;

use llcsnap_core::cache::{CacheGeometry, FlushStyle, ReplacementPolicy};
use llcsnap_core::shutter::ShutterConfig;
use llcsnap_core::vm::{Pid, VmConfig};
use llcsnap_core::workload::{
    build_benchmark, vision_preset, Activation, Benchmark, Program, SchedPolicy, Scheduler, TaskSpec, TimingModel,
    WorldSetup,
};
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use crate::error::CliError;

/// Byte count written with an explicit unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size(pub u64);

const UNITS: [(&str, u64); 7] = [
    ("GiB", 1 << 30),
    ("MiB", 1 << 20),
    ("KiB", 1 << 10),
    ("GB", 1 << 30),
    ("MB", 1 << 20),
    ("KB", 1 << 10),
    ("B", 1),
];

impl std::str::FromStr for Size {
    type Err = String;

    /// Accepts `<integer><unit>` with an optional space; `KB`/`MB`/`GB` are
    /// binary multiples like their `KiB` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (unit, mult) = UNITS
            .iter()
            .find(|(u, _)| s.ends_with(u))
            .ok_or_else(|| format!("size {s:?} needs a unit (B, KB, MB, GB)"))?;
        let digits = s[..s.len() - unit.len()].trim();
        let n: u64 = digits.parse().map_err(|_| format!("bad size {s:?}"))?;
        n.checked_mul(*mult).map(Size).ok_or_else(|| format!("size {s:?} overflows"))
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (unit, mult) in UNITS.iter().skip(3) {
            if self.0 >= *mult && self.0 % mult == 0 {
                return write!(f, "{}{unit}", self.0 / mult);
            }
        }
        write!(f, "{}B", self.0)
    }
}

impl<'de> Deserialize<'de> for Size {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Size;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a size string such as \"512KB\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Size, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_str(V)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub name: Option<String>,
    pub description: Option<String>,
    /// Bundle directory, relative to the output root.
    pub output: Option<String>,
    #[serde(default)]
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default)]
    pub shutter: ShutterSection,
    #[serde(default, rename = "task")]
    pub tasks: Vec<TaskConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentKind {
    /// Run the tasks with the trigger attached and store every snapshot.
    #[default]
    Run,
    ReplDensity {
        iterations: u64,
        trials: u64,
        #[serde(default = "yes")]
        prefill: bool,
    },
    WayFrequency {
        runs: u64,
    },
    /// Isolation profiles of every task plus pairwise slowdowns of the
    /// `observed` tasks against every task.
    Interference {
        observed: Vec<String>,
        period: u64,
    },
    /// Two back-to-back snapshots after the first task finishes.
    Pollution,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Run => "run",
            Self::ReplDensity { .. } => "repl-density",
            Self::WayFrequency { .. } => "way-frequency",
            Self::Interference { .. } => "interference",
            Self::Pollution => "pollution",
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub size: Size,
    pub ways: u32,
    pub line: Size,
    pub phys_bits: u32,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = CacheGeometry::default();
        Self {
            size: Size(g.total_size()),
            ways: g.ways(),
            line: Size(g.line_size()),
            phys_bits: g.phys_addr_bits(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub frames_per_process: Option<u64>,
    pub base_frame: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    #[default]
    TrueRandom,
    Lru,
    Fifo,
    /// Explicit `weights`, or uniform weights with `dip = [first, last]`
    /// ways scaled by `1 - down_weight`.
    BiasedRandom {
        weights: Option<Vec<f64>>,
        dip: Option<[u32; 2]>,
        down_weight: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedKind {
    #[default]
    FixedPriority,
    CfsLike,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    #[serde(default)]
    pub policy: SchedKind,
    pub quantum: Option<u64>,
    #[serde(default = "one")]
    pub cores: usize,
}

fn one() -> usize {
    1
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            policy: SchedKind::FixedPriority,
            quantum: None,
            cores: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub hit_cycles: u64,
    pub miss_cycles: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        let t = TimingModel::default();
        Self {
            hit_cycles: t.hit_cost,
            miss_cycles: t.miss_cost,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerMode {
    #[default]
    Never,
    Periodic,
    Event,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    #[serde(default)]
    pub mode: TriggerMode,
    /// Rounds between periodic activations.
    pub period: Option<u64>,
    #[serde(default)]
    pub core: usize,
    #[serde(default)]
    pub quiesce_delay: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlushStyleConfig {
    HardInvalidate,
    Trash,
    TrashThenInvalidate,
}

impl From<FlushStyleConfig> for FlushStyle {
    fn from(f: FlushStyleConfig) -> Self {
        match f {
            FlushStyleConfig::HardInvalidate => FlushStyle::HardInvalidate,
            FlushStyleConfig::Trash => FlushStyle::Trash,
            FlushStyleConfig::TrashThenInvalidate => FlushStyle::TrashThenInvalidate,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShutterSection {
    #[serde(default = "yes")]
    pub flush: bool,
    #[serde(default = "yes")]
    pub sync: bool,
    #[serde(default = "yes")]
    pub resolve: bool,
    #[serde(default)]
    pub layout: bool,
    pub flush_style: Option<FlushStyleConfig>,
    pub trash_lines: Option<u64>,
    pub reserved_snapshots: Option<u64>,
    #[serde(default)]
    pub pollution_lines: u64,
}

impl Default for ShutterSection {
    fn default() -> Self {
        Self {
            flush: true,
            sync: true,
            resolve: true,
            layout: false,
            flush_style: None,
            trash_lines: None,
            reserved_snapshots: None,
            pollution_lines: 0,
        }
    }
}

impl ShutterSection {
    pub fn to_core(&self) -> ShutterConfig {
        let d = ShutterConfig::default();
        ShutterConfig {
            flush: self.flush,
            sync: self.sync,
            resolve: self.resolve,
            capture_layout: self.layout,
            flush_style: self.flush_style.map(Into::into).unwrap_or(d.flush_style),
            trash_lines: self.trash_lines,
            reserved_snapshots: self.reserved_snapshots,
            pollution_lines: self.pollution_lines,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub pid: u64,
    /// Label used in reports; defaults to the workload name.
    pub name: Option<String>,
    #[serde(default)]
    pub core: usize,
    #[serde(default)]
    pub priority: i64,
    pub workload: WorkloadConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadConfig {
    Synth { buffer: Size, iterations: u64 },
    SynthStep { buffer: Size, iterations: u64 },
    Bomb { size: Size, passes: u64 },
    Repl {
        iterations: u64,
        #[serde(default = "yes")]
        signal: bool,
    },
    ReplStep,
    /// One of the vision-kernel presets, pass counts multiplied by `scale`.
    Vision { preset: String, scale: Option<f64> },
}

impl WorkloadConfig {
    pub fn label(&self) -> String {
        match self {
            Self::Synth { .. } => "synth".into(),
            Self::SynthStep { .. } => "synth-step".into(),
            Self::Bomb { .. } => "bomb".into(),
            Self::Repl { .. } => "repl".into(),
            Self::ReplStep => "repl-step".into(),
            Self::Vision { preset, .. } => preset.clone(),
        }
    }

    fn benchmark(&self) -> Result<Benchmark, String> {
        Ok(match self {
            Self::Synth { buffer, iterations } => Benchmark::Synth {
                buffer: buffer.0,
                iterations: *iterations,
            },
            Self::SynthStep { buffer, iterations } => Benchmark::SynthStep {
                buffer: buffer.0,
                iterations: *iterations,
            },
            Self::Bomb { size, passes } => Benchmark::Bomb {
                size: size.0,
                passes: *passes,
            },
            Self::Repl { iterations, signal } => Benchmark::Repl {
                iterations: *iterations,
                signal: *signal,
            },
            Self::ReplStep => Benchmark::ReplStep,
            Self::Vision { preset, scale } => {
                let mut p = vision_preset(preset).map_err(|e| e.to_string())?;
                if let Some(s) = scale {
                    if !(s.is_finite() && *s > 0.0) {
                        return Err(format!("scale must be positive, got {s}"));
                    }
                    p = p.scaled(*s);
                }
                Benchmark::Vision(p)
            }
        })
    }
}

/// A task list entry with its program built.
#[derive(Debug, Clone)]
pub struct ResolvedTask {
    pub name: String,
    pub spec: TaskSpec,
}

/// Everything an experiment needs, converted and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub kind: ExperimentKind,
    /// Setup with seeds already derived from the master seed.
    pub setup: WorldSetup,
    pub scheduler: Scheduler,
    pub activation: Activation,
    pub trigger_core: usize,
    pub quiesce_delay: u64,
    pub shutter: ShutterConfig,
    pub tasks: Vec<ResolvedTask>,
}

fn bad(field: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let g = &self.geometry;
        let geometry =
            CacheGeometry::new(g.size.0, g.ways, g.line.0, g.phys_bits).map_err(|e| bad("geometry", e))?;

        let policy = match &self.policy {
            PolicyConfig::TrueRandom => ReplacementPolicy::TrueRandom { seed: 0 },
            PolicyConfig::Lru => ReplacementPolicy::Lru,
            PolicyConfig::Fifo => ReplacementPolicy::Fifo,
            PolicyConfig::BiasedRandom {
                weights,
                dip,
                down_weight,
            } => match (weights, dip, down_weight) {
                (Some(w), None, None) => {
                    if w.len() != geometry.ways() as usize {
                        return Err(bad(
                            "policy.weights",
                            format!("need {} weights, got {}", geometry.ways(), w.len()),
                        ));
                    }
                    ReplacementPolicy::BiasedRandom {
                        seed: 0,
                        weights: w.clone(),
                    }
                }
                (None, Some([lo, hi]), Some(d)) => {
                    if lo > hi || *hi >= geometry.ways() {
                        return Err(bad("policy.dip", format!("ways {lo}..={hi} out of range")));
                    }
                    if !(0.0..1.0).contains(d) {
                        return Err(bad("policy.down_weight", "must be in [0, 1)"));
                    }
                    ReplacementPolicy::biased_dip(0, geometry.ways(), *lo..=*hi, *d)
                }
                _ => {
                    return Err(bad(
                        "policy",
                        "biased-random needs either `weights` or both `dip` and `down_weight`",
                    ))
                }
            },
        };

        let probe = matches!(
            self.experiment,
            ExperimentKind::ReplDensity { .. } | ExperimentKind::WayFrequency { .. }
        );
        let vm_default = VmConfig {
            // the probe protocols only need room for one huge buffer
            frames_per_process: if probe { 1024 } else { VmConfig::default().frames_per_process },
            ..VmConfig::default()
        };
        let vm = VmConfig {
            frames_per_process: self.memory.frames_per_process.unwrap_or(vm_default.frames_per_process),
            base_frame: self.memory.base_frame.unwrap_or(vm_default.base_frame),
            seed: 0,
        };
        if vm.frames_per_process == 0 {
            return Err(bad("memory.frames_per_process", "must be positive"));
        }
        let timing = TimingModel {
            hit_cost: self.timing.hit_cycles,
            miss_cost: self.timing.miss_cycles,
        };
        timing.validate().map_err(|e| bad("timing", e))?;
        let setup = WorldSetup {
            geometry,
            policy,
            vm,
            timing,
        }
        .reseeded(self.seed);

        let s = &self.scheduler;
        let sched_policy = match (s.policy, s.quantum) {
            (SchedKind::FixedPriority, None) => SchedPolicy::FixedPriority,
            (SchedKind::FixedPriority, Some(_)) => {
                return Err(bad("scheduler.quantum", "only meaningful for cfs-like"))
            }
            (SchedKind::CfsLike, Some(q)) if q > 0 => SchedPolicy::CfsLike { quantum: q },
            (SchedKind::CfsLike, _) => return Err(bad("scheduler.quantum", "cfs-like needs a positive quantum")),
        };
        if s.cores == 0 {
            return Err(bad("scheduler.cores", "must be at least 1"));
        }
        let scheduler = Scheduler {
            policy: sched_policy,
            cores: s.cores,
        };

        let t = &self.trigger;
        let activation = match (t.mode, t.period) {
            (TriggerMode::Never, None) => Activation::Never,
            (TriggerMode::Event, None) => Activation::Event,
            (TriggerMode::Periodic, Some(p)) if p > 0 => Activation::Periodic { period: p },
            (TriggerMode::Periodic, _) => return Err(bad("trigger.period", "periodic mode needs a positive period")),
            (_, Some(_)) => return Err(bad("trigger.period", "only meaningful in periodic mode")),
        };
        if t.core >= s.cores {
            return Err(bad("trigger.core", format!("core {} but only {} cores", t.core, s.cores)));
        }

        let mut tasks = Vec::with_capacity(self.tasks.len());
        for (i, tc) in self.tasks.iter().enumerate() {
            let field = format!("task[{i}]");
            if tc.pid == 0 || tc.pid == u64::MAX {
                return Err(bad(&format!("{field}.pid"), "0 and 2^64-1 are reserved"));
            }
            if tc.core >= s.cores {
                return Err(bad(&format!("{field}.core"), format!("only {} cores", s.cores)));
            }
            let bench = tc.workload.benchmark().map_err(|e| bad(&format!("{field}.workload"), e))?;
            let program: Program =
                build_benchmark(&bench, &geometry).map_err(|e| bad(&format!("{field}.workload"), e))?;
            tasks.push(ResolvedTask {
                name: tc.name.clone().unwrap_or_else(|| tc.workload.label()),
                spec: TaskSpec::new(Pid(tc.pid), program, tc.core, tc.priority),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if !seen.insert(t.spec.pid) {
                return Err(bad(&format!("task[{i}].pid"), format!("duplicate pid {}", t.spec.pid)));
            }
        }

        let shutter = self.shutter.to_core();
        match &self.experiment {
            ExperimentKind::Run => {
                if tasks.is_empty() {
                    return Err(bad("task", "run needs at least one task"));
                }
                if activation != Activation::Never {
                    let planned = planned_snapshots(&tasks, activation, geometry.line_size());
                    shutter.check_capacity(planned).map_err(|e| {
                        CliError::Config(format!("shutter.reserved_snapshots: {e} but the run plans {planned}"))
                    })?;
                }
            }
            ExperimentKind::ReplDensity { iterations, trials, .. } => {
                if *iterations == 0 || *trials == 0 {
                    return Err(bad("experiment", "iterations and trials must be positive"));
                }
                if !tasks.is_empty() {
                    return Err(bad("task", "repl-density builds its own probe tasks"));
                }
            }
            ExperimentKind::WayFrequency { runs } => {
                if *runs == 0 {
                    return Err(bad("experiment.runs", "must be positive"));
                }
                if !tasks.is_empty() {
                    return Err(bad("task", "way-frequency builds its own probe tasks"));
                }
            }
            ExperimentKind::Interference { observed, period } => {
                if *period == 0 {
                    return Err(bad("experiment.period", "must be positive"));
                }
                if tasks.len() < 2 {
                    return Err(bad("task", "interference needs at least two workloads"));
                }
                for o in observed {
                    if !tasks.iter().any(|t| &t.name == o) {
                        return Err(bad("experiment.observed", format!("no task named {o:?}")));
                    }
                }
                if observed.is_empty() {
                    return Err(bad("experiment.observed", "must not be empty"));
                }
            }
            ExperimentKind::Pollution => {
                if tasks.len() != 1 {
                    return Err(bad("task", "pollution needs exactly one lead task"));
                }
                shutter
                    .check_capacity(2)
                    .map_err(|e| CliError::Config(format!("shutter.reserved_snapshots: {e} but the protocol takes 2")))?;
            }
        }

        Ok(Resolved {
            seed: self.seed,
            kind: self.experiment.clone(),
            setup,
            scheduler,
            activation,
            trigger_core: t.core,
            quiesce_delay: t.quiesce_delay,
            shutter,
            tasks,
        })
    }
}

/// Upper bound on the snapshots a run takes. A periodic trigger fires at
/// most once per `period` rounds and every round performs at least one
/// access while tasks remain.
pub fn planned_snapshots(tasks: &[ResolvedTask], activation: Activation, line_size: u64) -> u64 {
    match activation {
        Activation::Never => 0,
        Activation::Periodic { period } => {
            let total = tasks
                .iter()
                .fold(0u64, |a, t| a.saturating_add(t.spec.program.access_count(line_size)));
            total / period
        }
        Activation::Event => tasks
            .iter()
            .fold(0u64, |a, t| a.saturating_add(t.spec.program.signal_count())),
    }
}
