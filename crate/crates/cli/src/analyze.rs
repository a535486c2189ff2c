use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use llcsnap_core::analysis::{active_set_excess, heatmap, occupancy, profiles, reused_set_eviction, AnalysisError};
use llcsnap_core::cache::CacheGeometry;
use llcsnap_core::experiment::PollutionOutcome;
use llcsnap_core::shutter::{pollution, Snapshot, SnapshotStore, SNAPSHOT_DIR};
use llcsnap_core::vm::Pid;
use llcsnap_core::workload::ANON;

use crate::bundle::{Table, CONFIG_COPY};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::reports;

pub const ANALYSES: [&str; 7] = [
    "heatmap",
    "occupancy",
    "profiles",
    "metrics",
    "repl-density",
    "way-freq",
    "pollution",
];

pub fn usage_list() -> String {
    format!("available analyses: {}", ANALYSES.join(", "))
}

/// `key=value` parameters, checked against what an analysis accepts.
struct Params(BTreeMap<String, String>);

impl Params {
    fn parse(raw: &[String], allowed: &[&str], analysis: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for p in raw {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("parameter {p:?} is not key=value")))?;
            if !allowed.contains(&k) {
                return Err(CliError::Usage(format!(
                    "{analysis} does not take {k:?} (accepts: {})",
                    if allowed.is_empty() { "nothing".to_string() } else { allowed.join(", ") }
                )));
            }
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Self(map))
    }

    fn pid(&self, key: &str) -> Result<Option<Pid>, CliError> {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map(Pid)
                    .map_err(|_| CliError::Usage(format!("{key}={v} is not a pid")))
            })
            .transpose()
    }
}

/// Bundle root for a path that may point at the bundle or its snapshot
/// directory.
pub fn bundle_root(path: &Path) -> PathBuf {
    if !path.join(SNAPSHOT_DIR).is_dir() && path.file_name().is_some_and(|n| n == SNAPSHOT_DIR) {
        if let Some(p) = path.parent() {
            return p.to_path_buf();
        }
    }
    path.to_path_buf()
}

fn load_snapshots(root: &Path) -> Result<Vec<Snapshot>, CliError> {
    Ok(SnapshotStore::open(root)?.load_all()?)
}

fn bundle_geometry(root: &Path) -> Result<CacheGeometry, CliError> {
    let path = root.join(CONFIG_COPY);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(ExperimentConfig::parse(&text)?.resolve()?.setup.geometry)
}

fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::UnknownRegion { .. } => CliError::Usage(e.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

pub fn analyze(path: &Path, name: &str, raw: &[String]) -> Result<Table, CliError> {
    let root = bundle_root(path);
    match name {
        "heatmap" => {
            let p = Params::parse(raw, &["pid", "region"], name)?;
            let pid = p.pid("pid")?.unwrap_or(Pid(1));
            let region = p.0.get("region").map_or(ANON, String::as_str);
            let snaps = load_snapshots(&root)?;
            Ok(reports::heatmap_table(&heatmap(&snaps, pid, region).map_err(analysis_err)?))
        }
        "occupancy" => {
            Params::parse(raw, &[], name)?;
            let store = SnapshotStore::open(&root)?;
            let mut rows = Vec::new();
            for f in store.snapshot_files()? {
                rows.extend(occupancy(&[store.load_file(&f)?]));
            }
            Ok(reports::occupancy_table(&rows))
        }
        "profiles" => {
            let p = Params::parse(raw, &["pid"], name)?;
            if root.join(SNAPSHOT_DIR).is_dir() {
                let pid = p.pid("pid")?.unwrap_or(Pid(1));
                let prof = profiles(&load_snapshots(&root)?, pid).map_err(analysis_err)?;
                Ok(reports::profiles_table(&[(format!("pid {}", pid.0), prof)]))
            } else {
                let t = Table::load(&root.join("profiles.csv"), reports::PROFILES)?;
                Ok(reports::profiles_table(&reports::parse_profiles(&t)?))
            }
        }
        "metrics" => {
            let p = Params::parse(raw, &["observed", "interfering"], name)?;
            if root.join(SNAPSHOT_DIR).is_dir() {
                let (Some(o), Some(i)) = (p.pid("observed")?, p.pid("interfering")?) else {
                    return Err(CliError::Usage("metrics on a snapshot store needs observed=<pid> interfering=<pid>".into()));
                };
                let snaps = load_snapshots(&root)?;
                let geom = snaps.first().map(|s| s.geometry).ok_or_else(|| CliError::Failed("empty store".into()))?;
                let (po, pi) = (profiles(&snaps, o).map_err(analysis_err)?, profiles(&snaps, i).map_err(analysis_err)?);
                let ase = active_set_excess(&po, &pi, &geom).map_err(analysis_err)?;
                let rse = reused_set_eviction(&po, &pi, &geom).map_err(analysis_err)?;
                Ok(reports::metrics_table(&[(o.0.to_string(), i.0.to_string(), ase, rse)]))
            } else {
                if !p.0.is_empty() {
                    return Err(CliError::Usage("profile bundles compute every pair; drop the pid parameters".into()));
                }
                let geom = bundle_geometry(&root)?;
                let profs = reports::parse_profiles(&Table::load(&root.join("profiles.csv"), reports::PROFILES)?)?;
                let mut rows = Vec::new();
                for (on, op) in &profs {
                    for (inn, ip) in &profs {
                        rows.push((
                            on.clone(),
                            inn.clone(),
                            active_set_excess(op, ip, &geom).map_err(analysis_err)?,
                            reused_set_eviction(op, ip, &geom).map_err(analysis_err)?,
                        ));
                    }
                }
                Ok(reports::metrics_table(&rows))
            }
        }
        "repl-density" => {
            Params::parse(raw, &[], name)?;
            let ks = reports::parse_repl_trials(&Table::load(&root.join("repl-trials.csv"), reports::REPL_TRIALS)?)?;
            reports::repl_density_table(&ks, bundle_geometry(&root)?.ways())
        }
        "way-freq" => {
            Params::parse(raw, &[], name)?;
            let t = Table::load(&root.join("way-decisions.csv"), reports::WAY_DECISIONS)?;
            reports::way_freq_table(&reports::parse_way_decisions(&t, bundle_geometry(&root)?.ways())?)
        }
        "pollution" => {
            Params::parse(raw, &[], name)?;
            let mut snaps = load_snapshots(&root)?;
            if snaps.len() != 2 {
                return Err(CliError::Failed(format!(
                    "pollution needs a store with exactly two snapshots, found {}",
                    snaps.len()
                )));
            }
            let second = snaps.pop().expect("two snapshots");
            let first = snaps.pop().expect("two snapshots");
            let pollution = pollution(&first, &second)?;
            Ok(reports::pollution_table(&PollutionOutcome {
                first,
                second,
                pollution,
            }))
        }
        other => Err(CliError::Usage(format!("unknown analysis {other:?}; {}", usage_list()))),
    }
}
