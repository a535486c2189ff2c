use std::path::{Path, PathBuf};

use llcsnap_core::analysis::occupancy;
use llcsnap_core::experiment::{
    interference, pollution_protocol, repl_density, way_frequency, InterferenceConfig, ReplDensityConfig,
    WayFrequencyConfig,
};
use llcsnap_core::shutter::{SnapshotStore, StoreSink, Trigger, SNAPSHOT_DIR};
use llcsnap_core::workload::{run, RunOptions};

use crate::bundle::{BundleWriter, Manifest, CONFIG_COPY};
use crate::config::{ExperimentConfig, ExperimentKind, Resolved};
use crate::error::CliError;
use crate::reports;

#[derive(Debug)]
pub struct RunOutcome {
    pub root: PathBuf,
    pub manifest: Manifest,
    /// Human-readable one-liners for the terminal.
    pub summary: Vec<String>,
}

/// Parses, validates and runs one experiment, writing its bundle to `out`.
pub fn run_config(text: &str, out: &Path) -> Result<RunOutcome, CliError> {
    let resolved = ExperimentConfig::parse(text)?.resolve()?;
    let mut bundle = BundleWriter::create(out)?;
    bundle.write_file(CONFIG_COPY, text.as_bytes())?;
    let summary = match &resolved.kind {
        ExperimentKind::Run => plain_run(&resolved, &mut bundle)?,
        ExperimentKind::ReplDensity {
            iterations,
            trials,
            prefill,
        } => {
            let o = repl_density(&ReplDensityConfig {
                setup: resolved.setup.clone(),
                iterations: *iterations,
                trials: *trials,
                seed: resolved.seed,
                prefill: *prefill,
            })?;
            bundle.write_table("repl-trials.csv", &reports::repl_trials_table(&o.ks))?;
            bundle.write_table(
                "repl-density.csv",
                &reports::repl_density_table(&o.ks, resolved.setup.geometry.ways())?,
            )?;
            vec![format!("{trials} trials, mean resident lines {:.4}", o.mean)]
        }
        ExperimentKind::WayFrequency { runs } => {
            let o = way_frequency(&WayFrequencyConfig {
                setup: resolved.setup.clone(),
                runs: *runs,
                seed: resolved.seed,
            })?;
            bundle.write_table("way-decisions.csv", &reports::way_decisions_table(&o.runs))?;
            bundle.write_table("way-freq.csv", &reports::way_freq_table(&o.frequency)?)?;
            vec![format!(
                "{runs} runs, {} decisions, {} violations",
                o.frequency.decisions(),
                o.frequency.violations
            )]
        }
        ExperimentKind::Interference { observed, period } => {
            let workloads: Vec<_> = resolved
                .tasks
                .iter()
                .map(|t| (t.name.clone(), t.spec.program.clone()))
                .collect();
            let observed = observed
                .iter()
                .map(|o| workloads.iter().position(|(n, _)| n == o).expect("checked by resolve"))
                .collect();
            let o = interference(&InterferenceConfig {
                setup: resolved.setup.clone(),
                workloads,
                observed,
                period: *period,
            })?;
            bundle.write_table("profiles.csv", &reports::profiles_table(&o.profiles))?;
            bundle.write_table("interference.csv", &reports::interference_table(&o.pairs))?;
            bundle.write_table(
                "correlation.csv",
                &reports::correlation_table(o.r_ase, o.r_rse, o.pairs.len()),
            )?;
            let mut lines: Vec<String> = o
                .profiles
                .iter()
                .map(|(n, p)| format!("{n}: {} snapshots", p.len()))
                .collect();
            lines.push(format!(
                "r(ase, slowdown) = {:.3}, r(rse, slowdown) = {:.3} over {} pairs",
                o.r_ase,
                o.r_rse,
                o.pairs.len()
            ));
            lines
        }
        ExperimentKind::Pollution => {
            let lead = &resolved.tasks[0].spec.program;
            let o = pollution_protocol(&resolved.setup, lead, resolved.shutter)?;
            let store = SnapshotStore::create(bundle.root())?;
            store.write(&o.first)?;
            store.write(&o.second)?;
            bundle.write_table("pollution.csv", &reports::pollution_table(&o))?;
            vec![format!("pollution {:.6}", o.pollution)]
        }
    };
    bundle.record_dir(SNAPSHOT_DIR)?;
    let root = bundle.root().to_path_buf();
    let manifest = bundle.finish(resolved.kind.name(), resolved.seed, text)?;
    Ok(RunOutcome {
        root,
        manifest,
        summary,
    })
}

fn plain_run(r: &Resolved, bundle: &mut BundleWriter) -> Result<Vec<String>, CliError> {
    let mut world = r.setup.build()?;
    let store = SnapshotStore::create(bundle.root())?;
    let mut trigger = Trigger::new(r.shutter, r.activation, StoreSink::new(store));
    trigger.trigger_core = r.trigger_core;
    trigger.quiesce_delay = r.quiesce_delay;
    let tasks = r.tasks.iter().map(|t| t.spec.clone()).collect();
    let result = run(&mut world, tasks, &r.scheduler, &mut trigger, &RunOptions::default())?;
    let names: Vec<(u64, String)> = r.tasks.iter().map(|t| (t.spec.pid.0, t.name.clone())).collect();
    bundle.write_table("run.csv", &reports::run_table(&result, &names))?;
    bundle.write_table("events.csv", &reports::events_table(&result))?;

    let store = trigger.into_sink().store;
    let mut rows = Vec::new();
    for path in store.snapshot_files()? {
        rows.extend(occupancy(&[store.load_file(&path)?]));
    }
    bundle.write_table("occupancy.csv", &reports::occupancy_table(&rows))?;
    Ok(vec![format!(
        "{} accesses in {} rounds, {} snapshots, {} context switches, {} preemptions",
        result.total_accesses,
        result.rounds,
        result.captures,
        result.context_switches(),
        result.preemptions()
    )])
}
