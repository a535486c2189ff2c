//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use llcsnap_cli::bundle::Table;
use llcsnap_cli::config::{ExperimentConfig, Resolved};
use llcsnap_cli::recipes;
use llcsnap_cli::run::run_config;
use llcsnap_cli::verify::{verify, Status};
use llcsnap_core::analysis::occupancy;
use llcsnap_core::cache::{AddressParts, CacheGeometry};
use llcsnap_core::shutter::{
    acquire, deserialize, serialize, ModeFlags, ShutterConfig, Snapshot, SnapshotRecord, SnapshotStore, Trigger,
};
use llcsnap_core::workload::{run, RunOptions, RunResult, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// State shared between criteria: bundles and snapshots produced earlier
/// are re-checked by the conservation and determinism criteria.
struct Ctx {
    tmp: tempfile::TempDir,
    bundles: BTreeMap<&'static str, PathBuf>,
    synth: Option<SynthRun>,
}

struct SynthRun {
    resolved: Resolved,
    world: World,
    result: RunResult,
    snaps: Vec<Snapshot>,
}

impl Ctx {
    fn dir(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn run_recipe(&mut self, name: &'static str) -> Result<PathBuf, String> {
        let text = recipes::find(name).ok_or_else(|| format!("missing recipe {name}"))?;
        let dir = self.dir(name);
        run_config(text, &dir).map_err(|e| format!("{name}: {e}"))?;
        self.bundles.insert(name, dir.clone());
        Ok(dir)
    }
}

fn table(dir: &Path, file: &str, schema: &str) -> Result<Table, String> {
    Table::load(&dir.join(file), schema).map_err(|e| e.to_string())
}

fn col<T: std::str::FromStr>(row: &[String], i: usize) -> T
where
    T::Err: std::fmt::Debug,
{
    row[i].parse().expect("numeric column")
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Field extraction for the default 2 MB / 16-way / 64 B / 44-bit layout
/// written as fixed bit ranges.
fn slice_default(addr: u64) -> AddressParts {
    let bits = |lo: u32, hi: u32| (addr >> lo) & ((1u64 << (hi - lo + 1)) - 1);
    AddressParts {
        tag: bits(17, 43),
        set: bits(6, 16),
        offset: bits(0, 5),
    }
}

fn c1_decomposition(_: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let g = CacheGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    for _ in 0..1_000_000 {
        let addr = rng.gen::<u64>() & ((1 << 44) - 1);
        let p = g.decompose(addr).map_err(|e| e.to_string())?;
        ensure!(p == slice_default(addr), "{addr:#x}: {p:?} vs oracle {:?}", slice_default(addr));
        ensure!(g.recompose(p) == addr, "{addr:#x} does not round-trip");
    }
    let spot = g.decompose(0x20000).map_err(|e| e.to_string())?;
    ensure!(spot.set == 0 && spot.tag == 1 && spot.offset == 0, "0x20000 -> {spot:?}");
    for k in 0..16u64 {
        ensure!(g.set_of(k * 128 * 1024) == 0, "{k} x 128KB not in set 0");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(5), "took {}", secs(t));
    Ok(format!("1e6 addresses match the bit-slicing oracle, 0x20000 -> set 0, {}", secs(t)))
}

fn random_snapshot(rng: &mut ChaCha8Rng, g: CacheGeometry) -> Snapshot {
    let flags = ModeFlags::from_bits(rng.gen_range(0..16)).unwrap();
    let mut s = Snapshot::empty(g, rng.gen(), rng.gen(), flags);
    for r in &mut s.records {
        if rng.gen_bool(0.7) {
            *r = SnapshotRecord {
                pid: rng.gen_range(0..1000),
                address: rng.gen(),
            };
        }
    }
    s
}

fn synth_run(ctx: &mut Ctx) -> Result<&SynthRun, String> {
    if ctx.synth.is_none() {
        let text = recipes::find("synth-flush").unwrap();
        let resolved = ExperimentConfig::parse(text)
            .and_then(|c| c.resolve())
            .map_err(|e| e.to_string())?;
        let mut world = resolved.setup.build().map_err(|e| e.to_string())?;
        let mut trigger = Trigger::new(resolved.shutter, resolved.activation, Vec::new());
        let tasks = resolved.tasks.iter().map(|t| t.spec.clone()).collect();
        let opts = RunOptions {
            record_trace: true,
            ..RunOptions::default()
        };
        let result =
            run(&mut world, tasks, &resolved.scheduler, &mut trigger, &opts).map_err(|e| e.to_string())?;
        ctx.synth = Some(SynthRun {
            resolved,
            world,
            result,
            snaps: trigger.into_sink(),
        });
    }
    Ok(ctx.synth.as_ref().unwrap())
}

fn c2_format(ctx: &mut Ctx) -> Verdict {
    let g = CacheGeometry::default();
    let expected = 32 + 16 * 32768;
    let run = synth_run(ctx)?;
    for s in &run.snaps {
        let bytes = serialize(s).map_err(|e| e.to_string())?;
        ensure!(bytes.len() == expected, "snapshot {} is {} bytes", s.sequence, bytes.len());
    }
    let bundle = ctx.run_recipe("synth-flush")?;
    let store = SnapshotStore::open(&bundle).map_err(|e| e.to_string())?;
    let files = store.snapshot_files().map_err(|e| e.to_string())?;
    for f in &files {
        let len = fs::metadata(f).map_err(|e| e.to_string())?.len();
        ensure!(len == expected as u64, "{} is {len} bytes", f.display());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let s = random_snapshot(&mut rng, g);
        let bytes = serialize(&s).map_err(|e| e.to_string())?;
        ensure!(bytes.len() == expected, "random snapshot {i} is {} bytes", bytes.len());
        ensure!(deserialize(&bytes).map_err(|e| e.to_string())? == s, "random snapshot {i} does not round-trip");
    }
    Ok(format!(
        "{} run snapshots and {} stored files are {expected} bytes; 1000 random snapshots round-trip",
        ctx.synth.as_ref().unwrap().snaps.len(),
        files.len()
    ))
}

fn c3_flush_soundness(ctx: &mut Ctx) -> Verdict {
    let run = synth_run(ctx)?;
    let pid = run.resolved.tasks[0].spec.pid;
    let line_mask = !(run.resolved.setup.geometry.line_size() - 1);
    ensure!(run.snaps.len() >= 8, "only {} snapshots", run.snaps.len());
    let (mut false_lines, mut missed, mut total) = (0usize, 0usize, 0usize);
    let mut prev = 0;
    for s in &run.snaps {
        let touched: HashSet<u64> = run
            .result
            .trace
            .iter()
            .filter(|e| e.pid == pid && e.time >= prev && e.time < s.timestamp)
            .map(|e| e.vaddr & line_mask)
            .collect();
        let seen = s.lines_of(pid);
        false_lines += seen.difference(&touched).count();
        missed += touched.difference(&seen).count();
        total += touched.len();
        prev = s.timestamp;
    }
    ensure!(false_lines == 0 && missed == 0, "{false_lines} false lines, {missed} missed lines");
    Ok(format!(
        "{} snapshots, {total} touched lines, 0 false, 0 missed",
        run.snaps.len()
    ))
}

fn c4_purity(ctx: &mut Ctx) -> Verdict {
    let run = synth_run(ctx)?;
    let w = &run.world;
    let before = w.cache.fingerprint();
    let cfg = ShutterConfig::transparent();
    let a = acquire(&w.cache, &w.vm, &cfg, 0, 0, &[]);
    let b = acquire(&w.cache, &w.vm, &cfg, 1, 0, &[]);
    let differ = a.records.iter().zip(&b.records).filter(|(x, y)| x != y).count();
    ensure!(differ == 0, "{differ} records differ");
    ensure!(w.cache.fingerprint() == before, "acquisition changed cache state");
    let valid = a.valid_count();
    let dir = ctx.run_recipe("pollution-transparent")?;
    let t = table(&dir, "pollution.csv", "pollution/1")?;
    let changed: u64 = col(&t.rows[0], 2);
    ensure!(changed == 0, "pollution protocol changed {changed} records");
    Ok(format!(
        "0 of 32768 records differ ({valid} valid); pollution protocol 0 of 32768"
    ))
}

fn c5_repl_density(ctx: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let dir = ctx.run_recipe("repl-density")?;
    let t = start.elapsed();
    let ks: Vec<u32> = table(&dir, "repl-trials.csv", "repl-trials/1")?
        .rows
        .iter()
        .map(|r| col(r, 1))
        .collect();
    ensure!(ks.len() == 10_000, "{} trials", ks.len());
    let mean = ks.iter().map(|&k| f64::from(k)).sum::<f64>() / ks.len() as f64;
    let oracle = 16.0 * (1.0 - (15.0f64 / 16.0).powi(16));
    ensure!((oracle - 10.30).abs() < 0.01, "oracle {oracle}");
    ensure!((mean - 10.30).abs() <= 0.10, "mean {mean:.4} outside 10.30 +- 0.10");
    ensure!(t < Duration::from_secs(30), "10k trials took {}", secs(t));
    let mut det = Vec::new();
    for name in ["repl-density-lru", "repl-density-fifo"] {
        let d = ctx.run_recipe(name)?;
        let t = table(&d, "repl-trials.csv", "repl-trials/1")?;
        let full = t.rows.iter().filter(|r| r[1] == "16").count();
        ensure!(full == t.rows.len() && full == 10_000, "{name}: {full} of {} trials at k = 16", t.rows.len());
        det.push(format!("{name} 10000/10000 at k=16"));
    }
    Ok(format!(
        "mean k {mean:.4} (oracle {oracle:.4}) in {}; {}",
        secs(t),
        det.join(", ")
    ))
}

fn frequencies(dir: &Path) -> Result<(Vec<f64>, u64, u64), String> {
    let t = table(dir, "way-decisions.csv", "way-decisions/1")?;
    let mut counts = [0u64; 16];
    let mut violations = 0;
    for r in &t.rows {
        match r[2].parse::<usize>() {
            Ok(w) => counts[w] += 1,
            Err(_) => violations += 1,
        }
    }
    let n: u64 = counts.iter().sum();
    Ok((counts.iter().map(|&c| c as f64 / n as f64).collect(), n, violations))
}

fn c6_way_frequency(ctx: &mut Ctx) -> Verdict {
    let dir = ctx.run_recipe("way-frequency")?;
    let (f, n, v) = frequencies(&dir)?;
    ensure!(n >= 32_000, "{n} decisions");
    ensure!(v == 0, "{v} protocol violations");
    let worst = f.iter().map(|p| (p - 0.0625).abs()).fold(0.0, f64::max);
    ensure!(worst <= 0.005, "uniform: worst deviation {worst:.5}");

    let dir = ctx.run_recipe("way-frequency-biased")?;
    let (f, n, v) = frequencies(&dir)?;
    ensure!(n >= 32_000 && v == 0, "biased: {n} decisions, {v} violations");
    // ways 7..=11 at weight 0.8, the other 11 at 1
    let weights: Vec<f64> = (0..16).map(|w| if (7..=11).contains(&w) { 0.8 } else { 1.0 }).collect();
    let total: f64 = weights.iter().sum();
    let worst_b = f
        .iter()
        .zip(&weights)
        .map(|(p, w)| (p - w / total).abs())
        .fold(0.0, f64::max);
    ensure!(worst_b <= 0.005, "biased: worst deviation {worst_b:.5}");
    let dipped = f[7..=11].iter().sum::<f64>() / 5.0;
    let others = (f[..7].iter().sum::<f64>() + f[12..].iter().sum::<f64>()) / 11.0;
    Ok(format!(
        "uniform {n} decisions, worst |f - 6.25%| = {:.3}%; biased worst deviation {:.3}%, dipped/other ratio {:.3}",
        worst * 100.0,
        worst_b * 100.0,
        dipped / others
    ))
}

fn c7_interference(ctx: &mut Ctx) -> Verdict {
    let start = Instant::now();
    let dir = ctx.run_recipe("interference")?;
    let t = start.elapsed();
    let profiles = table(&dir, "profiles.csv", "profiles/1")?;
    let mut snaps: BTreeMap<String, usize> = BTreeMap::new();
    for r in &profiles.rows {
        *snaps.entry(r[0].clone()).or_default() += 1;
    }
    ensure!(snaps.len() == 5, "{} workloads", snaps.len());
    let fewest = snaps.values().copied().min().unwrap_or(0);
    ensure!(fewest >= 100, "a workload has only {fewest} snapshots: {snaps:?}");
    let corr = table(&dir, "correlation.csv", "correlation/1")?;
    let r = |m: &str| -> f64 { col(corr.rows.iter().find(|r| r[0] == m).unwrap(), 1) };
    let (ra, rr) = (r("ase"), r("rse"));
    ensure!(ra >= 0.5 && rr >= 0.5, "r_ase {ra:.3}, r_rse {rr:.3}");
    ensure!(t < Duration::from_secs(120), "took {}", secs(t));
    Ok(format!(
        "r(ASE) = {ra:.3}, r(RSE) = {rr:.3} over 20 pairs, >= {fewest} snapshots per workload, {} (hardware reference 0.74 / 0.80)",
        secs(t)
    ))
}

struct Timeline {
    /// Owned lines per pid for each snapshot, in order.
    rows: Vec<BTreeMap<u64, u64>>,
}

fn timeline(dir: &Path) -> Result<Timeline, String> {
    let t = table(dir, "occupancy.csv", "occupancy/1")?;
    let mut rows: BTreeMap<u64, BTreeMap<u64, u64>> = BTreeMap::new();
    for r in &t.rows {
        let snap: u64 = col(r, 0);
        let entry = rows.entry(snap).or_default();
        if let Ok(pid) = r[2].parse::<u64>() {
            entry.insert(pid, col(r, 3));
        }
    }
    Ok(Timeline {
        rows: rows.into_values().collect(),
    })
}

/// Snapshots where at least two pids each hold 10% of the attributed lines.
fn shared_snapshots(tl: &Timeline) -> usize {
    tl.rows
        .iter()
        .filter(|m| {
            let total: u64 = m.values().sum();
            m.values().filter(|&&v| v * 10 >= total && v > 0).count() >= 2
        })
        .count()
}

fn c8_scheduler(ctx: &mut Ctx) -> Verdict {
    let fp = ctx.run_recipe("vision4-fixed-priority")?;
    let ev = table(&fp, "events.csv", "events/1")?;
    let preempt = ev.rows.iter().filter(|r| r[1].contains("preemption")).count();
    ensure!(preempt == 0, "fixed priority: {preempt} preemption events");
    let order: Vec<u64> = ev.rows.iter().filter(|r| r[1] == "completed").map(|r| col(r, 3)).collect();
    ensure!(order == [1, 2, 3, 4], "completion order {order:?}");
    let tl = timeline(&fp)?;
    let dominant: Vec<u64> = tl
        .rows
        .iter()
        .filter_map(|m| m.iter().max_by_key(|(_, &v)| v).map(|(&p, _)| p))
        .collect();
    ensure!(dominant.windows(2).all(|w| w[0] <= w[1]), "dominance not sequential: {dominant:?}");
    let distinct: BTreeSet<u64> = dominant.iter().copied().collect();
    ensure!(distinct.len() == 4, "only pids {distinct:?} ever dominate");
    let most_owners = tl.rows.iter().map(|m| m.len()).max().unwrap_or(0);
    ensure!(most_owners <= 2, "a fixed-priority snapshot holds {most_owners} pids");
    let fp_shared = shared_snapshots(&tl);

    let cfs = ctx.run_recipe("vision4-cfs")?;
    let text = fs::read_to_string(cfs.join("config.toml")).map_err(|e| e.to_string())?;
    let quantum = match ExperimentConfig::parse(&text).map_err(|e| e.to_string())?.scheduler.quantum {
        Some(q) => q,
        None => return Err("cfs recipe has no quantum".into()),
    };
    let ev = table(&cfs, "events.csv", "events/1")?;
    let switches: Vec<u64> = ev
        .rows
        .iter()
        .filter(|r| r[1] == "context-switch" && !r[4].is_empty())
        .map(|r| col(r, 0))
        .collect();
    let completions: Vec<u64> = ev.rows.iter().filter(|r| r[1] == "completed").map(|r| col(r, 0)).collect();
    ensure!(completions.len() == 4, "{} completions", completions.len());
    // while at least two tasks are runnable every quantum window holds a switch
    let contended_until = completions[completions.len() - 2];
    let windows = contended_until / quantum;
    let mut empty = 0;
    for k in 0..windows {
        if !switches.iter().any(|&t| t > k * quantum && t <= (k + 1) * quantum) {
            empty += 1;
        }
    }
    ensure!(empty == 0, "{empty} of {windows} quantum windows without a context switch");
    let tl = timeline(&cfs)?;
    let shared = shared_snapshots(&tl);
    let contended = tl.rows.len() * contended_until as usize / completions[3] as usize;
    ensure!(
        shared * 2 >= contended && shared > 10 * fp_shared.max(1),
        "interleaving: {shared} shared snapshots of ~{contended} contended (fixed priority {fp_shared})"
    );
    Ok(format!(
        "fixed priority: 0 preemptions, dominance 1->2->3->4; cfs: {} switches, every one of {windows} quantum windows switched, {shared}/{} snapshots shared (fixed priority {fp_shared})",
        switches.len(),
        tl.rows.len()
    ))
}

fn c9_conservation(ctx: &mut Ctx) -> Verdict {
    let mut checked = 0usize;
    if let Some(run) = &ctx.synth {
        for row in occupancy(&run.snaps) {
            ensure!(row.total() == 32768, "in-memory snapshot {} sums to {}", row.sequence, row.total());
            checked += 1;
        }
    }
    let mut stores = 0;
    for (name, dir) in &ctx.bundles {
        if !dir.join("snapshots").is_dir() {
            continue;
        }
        stores += 1;
        let store = SnapshotStore::open(dir).map_err(|e| e.to_string())?;
        for f in store.snapshot_files().map_err(|e| e.to_string())? {
            let s = store.load_file(&f).map_err(|e| e.to_string())?;
            for row in occupancy(&[s]) {
                let invalid_and_rest = row.per_pid.values().sum::<u64>() + row.unattributed + row.invalid;
                ensure!(invalid_and_rest == 32768, "{name} {}: {invalid_and_rest}", f.display());
                checked += 1;
            }
        }
        let report = verify(dir).map_err(|e| e.to_string())?;
        ensure!(
            report.status("conservation") == Some(Status::Pass),
            "{name}: verify conservation {:?}",
            report.status("conservation")
        );
        ensure!(report.exit_code() == 0, "{name}: verify exit {}", report.exit_code());
    }
    ensure!(checked > 0, "no snapshots were produced");
    Ok(format!("{checked} snapshots over {stores} stores plus the in-memory run sum to 32768"))
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn run_with_threads(name: &str, dir: &Path, threads: usize) -> Result<(), String> {
    let text = recipes::find(name).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?
        .install(|| run_config(text, dir))
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn c10_determinism(ctx: &mut Ctx) -> Verdict {
    let mut compared = Vec::new();
    for (name, threads) in [("synth-flush", 3), ("way-frequency", 4), ("repl-density", 4), ("vision4-cfs", 2)] {
        let Some(first) = ctx.bundles.get(name).cloned() else {
            return Err(format!("{name} was not run earlier"));
        };
        let again = ctx.dir(&format!("{name}-again"));
        run_with_threads(name, &again, threads)?;
        let (a, b) = (tree(&first), tree(&again));
        ensure!(a.len() == b.len(), "{name}: {} vs {} files", a.len(), b.len());
        for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
            ensure!(pa == pb && ba == bb, "{name}: {pa} differs from {pb}");
        }
        compared.push(format!("{name} ({} files, {threads} threads)", a.len()));
    }
    Ok(format!("byte-identical bundles: {}", compared.join(", ")))
}

fn main() {
    let criteria: [(&str, fn(&mut Ctx) -> Verdict); 10] = [
        ("address decomposition", c1_decomposition),
        ("snapshot format", c2_format),
        ("flush-mode soundness", c3_flush_soundness),
        ("transparent-mode purity", c4_purity),
        ("replacement density", c5_repl_density),
        ("way frequency", c6_way_frequency),
        ("interference metrics", c7_interference),
        ("scheduler fidelity", c8_scheduler),
        ("conservation", c9_conservation),
        ("determinism", c10_determinism),
    ];
    let mut ctx = Ctx {
        tmp: tempfile::tempdir().expect("temporary directory"),
        bundles: BTreeMap::new(),
        synth: None,
    };
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| f(&mut ctx)))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {title}: {detail} [{}]", i + 1, secs(start.elapsed()));
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
