//! Conversions from results to CSV tables. Shared by `run`, which writes
//! them into the bundle, and `analyze`, which recomputes them from stored
//! data.

use llcsnap_core::analysis::{replacement_density, HeatMap, OccupancyRow, Profile, WayDecision, WayFrequency};
use llcsnap_core::experiment::{PairMetrics, PollutionOutcome};
use llcsnap_core::workload::{EventKind, RunResult};

use crate::bundle::Table;
use crate::error::CliError;

pub const HEATMAP: &str = "heatmap/1";
pub const OCCUPANCY: &str = "occupancy/1";
pub const PROFILES: &str = "profiles/1";
pub const METRICS: &str = "metrics/1";
pub const INTERFERENCE: &str = "interference/1";
pub const CORRELATION: &str = "correlation/1";
pub const REPL_TRIALS: &str = "repl-trials/1";
pub const REPL_DENSITY: &str = "repl-density/1";
pub const WAY_DECISIONS: &str = "way-decisions/1";
pub const WAY_FREQ: &str = "way-freq/1";
pub const POLLUTION: &str = "pollution/1";
pub const RUN_STATS: &str = "run/1";
pub const EVENTS: &str = "events/1";

/// Correlations reported for a real platform with the same metrics, kept
/// next to the simulated values for comparison.
pub const HARDWARE_R_ASE: f64 = 0.74;
pub const HARDWARE_R_RSE: f64 = 0.80;

fn s(v: impl ToString) -> String {
    v.to_string()
}

/// One row per (snapshot, page) with the page index relative to the region
/// start.
pub fn heatmap_table(h: &HeatMap) -> Table {
    let mut t = Table::new(HEATMAP, &["snapshot:int", "page_offset:int", "lines:int"]);
    for (i, seq) in h.sequences.iter().enumerate() {
        for (page, row) in h.cells.iter().enumerate() {
            t.push(vec![s(seq), s(page), s(row[i])]);
        }
    }
    t
}

/// Long format: one row per owner per snapshot, with `unattributed` and
/// `invalid` rows closing each snapshot.
pub fn occupancy_table(rows: &[OccupancyRow]) -> Table {
    let mut t = Table::new(OCCUPANCY, &["snapshot:int", "timestamp:int", "owner:str", "lines:int"]);
    for r in rows {
        for (pid, n) in &r.per_pid {
            t.push(vec![s(r.sequence), s(r.timestamp), s(pid.0), s(n)]);
        }
        t.push(vec![s(r.sequence), s(r.timestamp), s("unattributed"), s(r.unattributed)]);
        t.push(vec![s(r.sequence), s(r.timestamp), s("invalid"), s(r.invalid)]);
    }
    t
}

pub fn profiles_table(profiles: &[(String, Profile)]) -> Table {
    let mut t = Table::new(PROFILES, &["workload:str", "snapshot:int", "active:int", "reused:int"]);
    for (name, p) in profiles {
        for i in 0..p.len() {
            t.push(vec![name.clone(), s(i), s(p.active[i]), s(p.reused[i])]);
        }
    }
    t
}

pub fn parse_profiles(t: &Table) -> Result<Vec<(String, Profile)>, CliError> {
    let mut out: Vec<(String, Profile)> = Vec::new();
    for row in &t.rows {
        let n = |i: usize| row[i].parse::<u64>().map_err(|e| CliError::Corrupt(format!("profiles row {row:?}: {e}")));
        let (active, reused) = (n(2)?, n(3)?);
        match out.last_mut() {
            Some((name, p)) if *name == row[0] => {
                p.active.push(active);
                p.reused.push(reused);
            }
            _ => out.push((
                row[0].clone(),
                Profile {
                    pid: llcsnap_core::vm::Pid(0),
                    active: vec![active],
                    reused: vec![reused],
                },
            )),
        }
    }
    Ok(out)
}

pub fn metrics_table(rows: &[(String, String, f64, f64)]) -> Table {
    let mut t = Table::new(METRICS, &["observed:str", "interfering:str", "ase:float", "rse:float"]);
    for (o, i, ase, rse) in rows {
        t.push(vec![o.clone(), i.clone(), s(ase), s(rse)]);
    }
    t
}

pub fn interference_table(pairs: &[PairMetrics]) -> Table {
    let mut t = Table::new(
        INTERFERENCE,
        &["observed:str", "interfering:str", "ase:float", "rse:float", "slowdown:float"],
    );
    for p in pairs {
        t.push(vec![p.observed.clone(), p.interfering.clone(), s(p.ase), s(p.rse), s(p.slowdown)]);
    }
    t
}

pub fn correlation_table(r_ase: f64, r_rse: f64, pairs: usize) -> Table {
    let mut t = Table::new(CORRELATION, &["metric:str", "pearson_r:float", "pairs:int", "hardware_reference:float"]);
    t.push(vec![s("ase"), s(r_ase), s(pairs), s(HARDWARE_R_ASE)]);
    t.push(vec![s("rse"), s(r_rse), s(pairs), s(HARDWARE_R_RSE)]);
    t
}

pub fn repl_trials_table(ks: &[u32]) -> Table {
    let mut t = Table::new(REPL_TRIALS, &["trial:int", "k:int"]);
    for (i, k) in ks.iter().enumerate() {
        t.push(vec![s(i), s(k)]);
    }
    t
}

pub fn parse_repl_trials(t: &Table) -> Result<Vec<u32>, CliError> {
    t.rows
        .iter()
        .map(|r| r[1].parse().map_err(|e| CliError::Corrupt(format!("repl trial row {r:?}: {e}"))))
        .collect()
}

pub fn repl_density_table(ks: &[u32], ways: u32) -> Result<Table, CliError> {
    let density = replacement_density(ks, ways).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut t = Table::new(REPL_DENSITY, &["k:int", "trials:int", "density:float"]);
    for (k, d) in density.iter().enumerate() {
        let n = ks.iter().filter(|&&x| x as usize == k).count();
        t.push(vec![s(k), s(n), s(d)]);
    }
    Ok(t)
}

pub fn way_decisions_table(runs: &[Vec<WayDecision>]) -> Table {
    let mut t = Table::new(WAY_DECISIONS, &["run:int", "step:int", "way:str"]);
    for (r, ds) in runs.iter().enumerate() {
        for (step, d) in ds.iter().enumerate() {
            let way = match d {
                WayDecision::Way(w) => s(w),
                WayDecision::Violation(_) => s("violation"),
            };
            t.push(vec![s(r), s(step), way]);
        }
    }
    t
}

pub fn parse_way_decisions(t: &Table, ways: u32) -> Result<WayFrequency, CliError> {
    let mut f = WayFrequency::new(ways);
    for r in &t.rows {
        let d = if r[2] == "violation" {
            WayDecision::Violation("recorded".into())
        } else {
            let w: u32 = r[2].parse().map_err(|e| CliError::Corrupt(format!("way row {r:?}: {e}")))?;
            if w >= ways {
                return Err(CliError::Corrupt(format!("way {w} out of range")));
            }
            WayDecision::Way(w)
        };
        f.add(&d);
    }
    Ok(f)
}

/// Frequencies over valid decisions; protocol violations are counted
/// separately in the last row.
pub fn way_freq_table(f: &WayFrequency) -> Result<Table, CliError> {
    let freq = f.frequencies().map_err(|e| CliError::Failed(e.to_string()))?;
    let mut t = Table::new(WAY_FREQ, &["way:str", "count:int", "frequency:float"]);
    for (w, (c, p)) in f.counts.iter().zip(&freq).enumerate() {
        t.push(vec![s(w), s(c), s(p)]);
    }
    t.push(vec![s("violations"), s(f.violations), s(0.0)]);
    Ok(t)
}

pub fn pollution_table(out: &PollutionOutcome) -> Table {
    let changed = out
        .first
        .records
        .iter()
        .zip(&out.second.records)
        .filter(|(a, b)| a != b)
        .count();
    let mut t = Table::new(
        POLLUTION,
        &["first:int", "second:int", "changed:int", "records:int", "pollution:float"],
    );
    t.push(vec![
        s(out.first.sequence),
        s(out.second.sequence),
        s(changed),
        s(out.first.records.len()),
        s(out.pollution),
    ]);
    t
}

pub fn run_table(r: &RunResult, names: &[(u64, String)]) -> Table {
    let mut t = Table::new(
        RUN_STATS,
        &[
            "pid:int",
            "name:str",
            "accesses:int",
            "hits:int",
            "misses:int",
            "cycles:int",
            "page_faults:int",
        ],
    );
    for (pid, st) in &r.per_pid {
        let name = names
            .iter()
            .find(|(p, _)| *p == pid.0)
            .map(|(_, n)| n.clone())
            .unwrap_or_default();
        t.push(vec![s(pid.0), name, s(st.accesses), s(st.hits), s(st.misses), s(st.cycles), s(st.page_faults)]);
    }
    t
}

pub fn events_table(r: &RunResult) -> Table {
    let mut t = Table::new(EVENTS, &["time:int", "event:str", "core:str", "pid:str", "detail:str"]);
    let none = String::new;
    for e in &r.events {
        let (kind, core, pid, detail) = match e.kind {
            EventKind::ContextSwitch { core, from, to } => (
                "context-switch",
                s(core),
                s(to.0),
                from.map(|p| format!("from {}", p.0)).unwrap_or_default(),
            ),
            EventKind::Preemption { core, pid } => ("preemption", s(core), s(pid.0), none()),
            EventKind::TriggerPreemption { core, pid } => ("trigger-preemption", s(core), s(pid.0), none()),
            EventKind::PageFault { pid, vaddr } => ("page-fault", none(), s(pid.0), format!("{vaddr:#x}")),
            EventKind::SegFault { pid, vaddr } => ("segfault", none(), s(pid.0), format!("{vaddr:#x}")),
            EventKind::Signal { pid } => ("signal", none(), s(pid.0), none()),
            EventKind::TriggerActivated => ("trigger-activated", none(), none(), none()),
            EventKind::Quiesced => ("quiesced", none(), none(), none()),
            EventKind::Captured => ("captured", none(), none(), none()),
            EventKind::Paused => ("paused", none(), none(), none()),
            EventKind::Resumed => ("resumed", none(), none(), none()),
            EventKind::Completed { pid } => ("completed", none(), s(pid.0), none()),
        };
        t.push(vec![s(e.time), s(kind), core, pid, detail]);
    }
    t
}
