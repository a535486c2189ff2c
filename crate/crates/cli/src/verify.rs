//! Invariant checks over a stored bundle.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use llcsnap_core::analysis::occupancy;
use llcsnap_core::cache::FlushStyle;
use llcsnap_core::shutter::format::{HEADER_LEN, RECORD_LEN};
use llcsnap_core::shutter::{deserialize, serialize, ShutterError, Snapshot, SnapshotStore, SNAPSHOT_DIR};
use llcsnap_core::vm::{Pid, PAGE_SHIFT};

use crate::analyze::bundle_root;
use crate::bundle::{Table, CONFIG_COPY};
use crate::config::{ExperimentConfig, ExperimentKind, Resolved};
use crate::error::CliError;

pub const VERIFY: &str = "verify/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub invariant: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn status(&self, invariant: &str) -> Option<Status> {
        self.checks.iter().find(|c| c.invariant == invariant).map(|c| c.status)
    }

    /// 3 when stored data is unreadable, 4 when an invariant fails, else 0.
    pub fn exit_code(&self) -> i32 {
        let failed = |name: &str| self.status(name) == Some(Status::Fail);
        if failed("format") {
            3
        } else if self.checks.iter().any(|c| c.status == Status::Fail) {
            4
        } else {
            0
        }
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(VERIFY, &["invariant:str", "status:str", "detail:str"]);
        for c in &self.checks {
            t.push(vec![c.invariant.to_string(), c.status.as_str().to_string(), c.detail.clone()]);
        }
        t
    }
}

/// Collects failures for one invariant, keeping the first few messages.
struct Tally {
    name: &'static str,
    checked: u64,
    failures: Vec<String>,
    failed: u64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            failures: Vec::new(),
            failed: 0,
        }
    }

    fn fail(&mut self, msg: String) {
        self.failed += 1;
        if self.failures.len() < 5 {
            self.failures.push(msg);
        }
    }

    fn finish(self, unit: &str) -> Check {
        if self.failed == 0 {
            Check {
                invariant: self.name,
                status: Status::Pass,
                detail: format!("{} {unit} checked", self.checked),
            }
        } else {
            let more = if self.failed > self.failures.len() as u64 {
                format!("; {} more", self.failed - self.failures.len() as u64)
            } else {
                String::new()
            };
            Check {
                invariant: self.name,
                status: Status::Fail,
                detail: format!("{}{more}", self.failures.join("; ")),
            }
        }
    }
}

fn skip(invariant: &'static str, why: &str) -> Check {
    Check {
        invariant,
        status: Status::Skip,
        detail: why.to_string(),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn record_offset(i: usize) -> usize {
    HEADER_LEN + i * RECORD_LEN
}

/// Checks one snapshot's attributions: alignment, page-offset bits against
/// the set index, layout bounds where a layout was captured, and no line
/// resident twice.
fn check_attribution(name: &str, s: &Snapshot, tally: &mut Tally) {
    let g = &s.geometry;
    let line_bits = g.line_size().trailing_zeros();
    let index_bits = g.sets().trailing_zeros();
    let shared = (PAGE_SHIFT.min(line_bits + index_bits)).saturating_sub(line_bits);
    let mask = (1u64 << shared) - 1;
    let mut seen: HashSet<(u64, u64)> = HashSet::with_capacity(s.records.len());
    for (i, r) in s.records.iter().enumerate() {
        let Some(owner) = r.owner() else { continue };
        tally.checked += 1;
        let (way, set) = s.coordinates(i);
        let at = format!("{name} record {i} (way {way}, set {set}) at byte {}", record_offset(i));
        if r.address & (g.line_size() - 1) != 0 {
            tally.fail(format!("{at}: address {:#x} is not line aligned", r.address));
            continue;
        }
        if owner == Pid::UNRESOLVED {
            if g.decompose(r.address).map(|p| p.set) != Ok(set) {
                tally.fail(format!("{at}: physical address {:#x} does not map to set {set}", r.address));
                continue;
            }
        } else if ((r.address >> line_bits) ^ set) & mask != 0 {
            tally.fail(format!("{at}: page offset of {:#x} is inconsistent with set {set}", r.address));
            continue;
        }
        if let Some(vmas) = s.layouts.get(&owner) {
            if !vmas.iter().any(|v| v.contains(r.address)) {
                tally.fail(format!("{at}: {:#x} is outside every region of pid {}", r.address, owner.0));
                continue;
            }
        }
        if !seen.insert((r.pid, r.address)) {
            tally.fail(format!("{at}: line {:#x} of pid {} is resident twice", r.address, r.pid));
        }
    }
}

fn bundle_config(root: &Path) -> Option<Resolved> {
    let text = fs::read_to_string(root.join(CONFIG_COPY)).ok()?;
    ExperimentConfig::parse(&text).ok()?.resolve().ok()
}

pub fn verify(path: &Path) -> Result<Report, CliError> {
    let root = bundle_root(path);
    if !root.join(SNAPSHOT_DIR).is_dir() {
        return Err(CliError::Usage(format!("{} holds no snapshot store", root.display())));
    }
    let store = SnapshotStore::open(&root)?;
    let files = store.snapshot_files()?;
    let mut report = Report::default();

    let mut format = Tally::new("format");
    let mut snaps: Vec<(String, Snapshot)> = Vec::new();
    for f in &files {
        let name = file_name(f);
        format.checked += 1;
        let bytes = fs::read(f).map_err(|e| CliError::io(f, e))?;
        let decoded = match deserialize(&bytes) {
            Ok(s) => s,
            Err(ShutterError::Format { offset, msg }) => {
                format.fail(format!("{name}: byte {offset}: {msg}"));
                continue;
            }
            Err(e) => {
                format.fail(format!("{name}: {e}"));
                continue;
            }
        };
        if serialize(&decoded).ok().as_deref() != Some(&bytes[..]) {
            format.fail(format!("{name}: re-encoding differs from the stored bytes"));
            continue;
        }
        match store.load_file(f) {
            Ok(s) => snaps.push((name, s)),
            Err(e) => format.fail(e.to_string()),
        }
    }
    report.checks.push(format.finish("files"));

    let mut seq = Tally::new("sequence");
    for (i, (name, s)) in snaps.iter().enumerate() {
        seq.checked += 1;
        if *name != file_name(&store.snapshot_path(s.sequence)) {
            seq.fail(format!("{name}: header sequence {} does not match the file name", s.sequence));
        }
        if let Some((_, prev)) = i.checked_sub(1).map(|j| &snaps[j]) {
            if s.sequence != prev.sequence + 1 {
                seq.fail(format!("{name}: sequence {} follows {}", s.sequence, prev.sequence));
            }
            if s.timestamp < prev.timestamp {
                seq.fail(format!("{name}: timestamp {} precedes {}", s.timestamp, prev.timestamp));
            }
            if s.geometry != prev.geometry {
                seq.fail(format!("{name}: geometry differs from the previous snapshot"));
            }
        }
    }
    report.checks.push(seq.finish("snapshots"));

    let mut cons = Tally::new("conservation");
    for (name, s) in &snaps {
        cons.checked += 1;
        for row in occupancy(std::slice::from_ref(s)) {
            let lines = s.geometry.lines();
            if row.total() != lines {
                cons.fail(format!(
                    "{name}: owners {} + unattributed {} + invalid {} != {lines}",
                    row.per_pid.values().sum::<u64>(),
                    row.unattributed,
                    row.invalid
                ));
            }
        }
    }
    report.checks.push(cons.finish("snapshots"));

    let mut attr = Tally::new("attribution");
    for (name, s) in &snaps {
        check_attribution(name, s, &mut attr);
    }
    report.checks.push(attr.finish("records"));

    let cfg = bundle_config(&root);
    report.checks.push(flush_check(&snaps, cfg.as_ref()));
    report.checks.push(purity_check(&snaps, cfg.as_ref()));
    Ok(report)
}

/// With an invalidating flush, every line valid at capture was touched
/// since the previous capture, so valid lines cannot exceed the accesses in
/// between.
fn flush_check(snaps: &[(String, Snapshot)], cfg: Option<&Resolved>) -> Check {
    let Some(cfg) = cfg else {
        return skip("flush", "no readable config in the bundle");
    };
    if !cfg.shutter.flush {
        return skip("flush", "store was taken in transparent mode");
    }
    if cfg.shutter.flush_style == FlushStyle::Trash {
        return skip("flush", "trash-only flushing leaves survivors by design");
    }
    if cfg.kind != ExperimentKind::Run {
        return skip("flush", "only periodic and event runs are checked");
    }
    let mut t = Tally::new("flush");
    let mut prev_ts = 0;
    for (name, s) in snaps {
        t.checked += 1;
        if !s.flags.flush {
            t.fail(format!("{name}: flush flag missing"));
        }
        let window = s.timestamp - prev_ts;
        let valid = s.valid_count() as u64;
        if valid > window {
            t.fail(format!("{name}: {valid} valid lines after a window of {window} accesses"));
        }
        prev_ts = s.timestamp;
    }
    t.finish("snapshots")
}

/// A transparent pollution bundle with no injected lines must hold two
/// identical snapshots.
fn purity_check(snaps: &[(String, Snapshot)], cfg: Option<&Resolved>) -> Check {
    let Some(cfg) = cfg else {
        return skip("purity", "no readable config in the bundle");
    };
    if cfg.kind != ExperimentKind::Pollution || cfg.shutter.flush || cfg.shutter.pollution_lines != 0 {
        return skip("purity", "applies to transparent pollution bundles without injected lines");
    }
    let mut t = Tally::new("purity");
    if let [(a, first), (b, second)] = snaps {
        t.checked = first.records.len() as u64;
        let diff: Vec<usize> = first
            .records
            .iter()
            .zip(&second.records)
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, _)| i)
            .collect();
        if let Some(i) = diff.first() {
            t.fail(format!("{a} and {b} differ in {} records, first at record {i}", diff.len()));
        }
    } else {
        t.fail(format!("expected two snapshots, found {}", snaps.len()));
    }
    t.finish("records")
}
