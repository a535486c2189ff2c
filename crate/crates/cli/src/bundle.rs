//! Report bundles: a directory holding the config copy, CSV artifacts, the
//! snapshot store and a manifest with content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const TOOL: &str = "llcsnap";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// CSV artifact whose first line declares its schema:
/// `# schema: <id> <column>:<type> ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub schema: String,
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// `columns` are `name:type` pairs, e.g. `"lines:int"`.
    pub fn new(schema: &str, columns: &[&str]) -> Self {
        let columns = columns
            .iter()
            .map(|c| {
                let (n, t) = c.split_once(':').unwrap_or((c, "str"));
                (n.to_string(), t.to_string())
            })
            .collect();
        Self {
            schema: schema.to_string(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn schema_line(&self) -> String {
        let cols: Vec<String> = self.columns.iter().map(|(n, t)| format!("{n}:{t}")).collect();
        format!("# schema: {} {}", self.schema, cols.join(" "))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.schema_line().into_bytes();
        out.push(b'\n');
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.columns.iter().map(|(n, _)| n)).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory write")
    }

    /// Parses a table written by [`Table::to_bytes`], checking the schema id.
    pub fn parse(bytes: &[u8], schema: &str) -> Result<Self, CliError> {
        let text = std::str::from_utf8(bytes).map_err(|e| CliError::Corrupt(format!("not UTF-8: {e}")))?;
        let first = text.lines().next().unwrap_or_default();
        let rest = first
            .strip_prefix("# schema: ")
            .ok_or_else(|| CliError::Corrupt("missing schema line".into()))?;
        let mut parts = rest.split(' ');
        if parts.next() != Some(schema) {
            return Err(CliError::Corrupt(format!("expected schema {schema}, found {rest:?}")));
        }
        let cols: Vec<&str> = parts.collect();
        let mut table = Table::new(schema, &cols);
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::Corrupt(e.to_string()))?;
            if rec.len() != table.columns.len() {
                return Err(CliError::Corrupt(format!("row with {} fields, expected {}", rec.len(), cols.len())));
            }
            table.rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(table)
    }

    pub fn load(path: &Path, schema: &str) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&bytes, schema).map_err(|e| match e {
            CliError::Corrupt(m) => CliError::Corrupt(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Bundle-relative path to content hash.
    pub artifacts: BTreeMap<String, String>,
}

/// Bundle being written.
#[derive(Debug)]
pub struct BundleWriter {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl BundleWriter {
    /// Prepares `root`. An earlier bundle there is replaced; any other
    /// non-empty directory is refused.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        if root.exists() {
            let nonempty = fs::read_dir(root).map_err(|e| CliError::io(root, e))?.next().is_some();
            if nonempty {
                if !root.join(MANIFEST).is_file() {
                    return Err(CliError::Usage(format!(
                        "{} exists and is not a report bundle",
                        root.display()
                    )));
                }
                fs::remove_dir_all(root).map_err(|e| CliError::io(root, e))?;
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_file(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_table(&mut self, rel: &str, table: &Table) -> Result<(), CliError> {
        self.write_file(rel, &table.to_bytes())
    }

    /// Hashes every file already present under `rel_dir`.
    pub fn record_dir(&mut self, rel_dir: &str) -> Result<(), CliError> {
        let dir = self.root.join(rel_dir);
        if !dir.is_dir() {
            return Ok(());
        }
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().and_then(|e| e.file_name().into_string().ok()))
            .collect();
        names.sort();
        for n in names {
            let p = dir.join(&n);
            let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            self.artifacts.insert(format!("{rel_dir}/{n}"), sha256_hex(&bytes));
        }
        Ok(())
    }

    pub fn finish(self, experiment: &str, seed: u64, config_text: &str) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            artifacts: self.artifacts,
        };
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Failed(e.to_string()))?;
        json.push(b'\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn load_manifest(root: &Path) -> Result<Manifest, CliError> {
    let path = root.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))
}
