//! Synthetic processes, benchmark generators and the multi-core execution
//! engine that drives them through the shared cache.

mod benchmarks;
mod engine;
mod program;

use thiserror::Error;

use crate::cache::CacheError;
use crate::vm::VmError;

pub use benchmarks::{
    build_benchmark, set0_offsets, vision_preset, Benchmark, Pattern, Phase, RegionSpec, VisionParams, ANON,
    REPL_REGION, VISION_PRESETS,
};
pub use engine::{
    measure_slowdown, run, Activation, Event, EventKind, NoTrigger, PidStats, PostProcessing, RunOptions,
    RunResult, SchedPolicy, Scheduler, StopWhen, TaskSpec, TimingModel, TraceEntry, TriggerHook, World,
    WorldSetup, WorldView,
};
pub use program::{Instruction, Program};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid program: {0}")]
    Program(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("snapshot store full: {reserved} slots reserved for transparent mode")]
    Capacity { reserved: u64 },
    /// Raised by a trigger hook; carries the hook's own message.
    #[error("trigger: {0}")]
    Trigger(String),
}
