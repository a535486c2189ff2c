use std::fs;
use std::path::{Path, PathBuf};

use super::{deserialize, serialize, Snapshot, SnapshotSink, ShutterError};
use crate::vm::{parse_layout, render_layout, Pid};

pub const SNAPSHOT_DIR: &str = "snapshots";
pub const SNAPSHOT_EXT: &str = "cfsnap";

/// Directory of `snap-NNNNN.cfsnap` files with optional
/// `snap-NNNNN.pid-P.maps` layout sidecars.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    dir: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> ShutterError {
    ShutterError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

impl SnapshotStore {
    /// Opens (creating if needed) the snapshot directory under `root`.
    pub fn create(root: &Path) -> Result<Self, ShutterError> {
        let dir = root.join(SNAPSHOT_DIR);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir })
    }

    /// Opens an existing store under `root`.
    pub fn open(root: &Path) -> Result<Self, ShutterError> {
        let dir = root.join(SNAPSHOT_DIR);
        if !dir.is_dir() {
            return Err(ShutterError::Io {
                path: dir.display().to_string(),
                msg: "not a snapshot store".into(),
            });
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot_path(&self, sequence: u32) -> PathBuf {
        self.dir.join(format!("snap-{sequence:05}.{SNAPSHOT_EXT}"))
    }

    pub fn layout_path(&self, sequence: u32, pid: Pid) -> PathBuf {
        self.dir.join(format!("snap-{sequence:05}.pid-{}.maps", pid.0))
    }

    /// Writes the snapshot and its sidecars; returns every path written.
    pub fn write(&self, snap: &Snapshot) -> Result<Vec<PathBuf>, ShutterError> {
        let path = self.snapshot_path(snap.sequence);
        fs::write(&path, serialize(snap)?).map_err(|e| io_err(&path, e))?;
        let mut written = vec![path];
        for (&pid, vmas) in &snap.layouts {
            let p = self.layout_path(snap.sequence, pid);
            fs::write(&p, render_layout(vmas)).map_err(|e| io_err(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }

    /// Snapshot files in sequence order.
    pub fn snapshot_files(&self) -> Result<Vec<PathBuf>, ShutterError> {
        let mut files: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| io_err(&self.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SNAPSHOT_EXT))
            .collect();
        files.sort();
        Ok(files)
    }

    /// Decodes one snapshot file together with its sidecars.
    pub fn load_file(&self, path: &Path) -> Result<Snapshot, ShutterError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let mut snap = deserialize(&bytes).map_err(|e| match e {
            ShutterError::Format { offset, msg } => ShutterError::Corrupt {
                path: path.display().to_string(),
                offset,
                msg,
            },
            other => other,
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let prefix = format!("{stem}.pid-");
        for entry in fs::read_dir(&self.dir).map_err(|e| io_err(&self.dir, e))? {
            let p = entry.map_err(|e| io_err(&self.dir, e))?.path();
            let Some(name) = p.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(pid) = name
                .strip_prefix(&prefix)
                .and_then(|r| r.strip_suffix(".maps"))
                .and_then(|n| n.parse::<u64>().ok())
            else {
                continue;
            };
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let vmas = parse_layout(&text).map_err(|e| ShutterError::Layout {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            snap.layouts.insert(Pid(pid), vmas);
        }
        Ok(snap)
    }

    pub fn load_all(&self) -> Result<Vec<Snapshot>, ShutterError> {
        self.snapshot_files()?.iter().map(|p| self.load_file(p)).collect()
    }
}

/// Writes snapshots to a store as they are captured and keeps only the
/// paths.
#[derive(Debug)]
pub struct StoreSink {
    pub store: SnapshotStore,
    pub written: Vec<PathBuf>,
}

impl StoreSink {
    pub fn new(store: SnapshotStore) -> Self {
        Self {
            store,
            written: Vec::new(),
        }
    }
}

impl SnapshotSink for StoreSink {
    fn accept(&mut self, snapshot: Snapshot) -> Result<(), ShutterError> {
        let paths = self.store.write(&snapshot)?;
        self.written.extend(paths);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheGeometry;
    use crate::shutter::{ModeFlags, SnapshotRecord};
    use crate::vm::standard_layout;

    #[test]
    fn store_round_trip_with_sidecars() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::create(tmp.path()).unwrap();
        let geom = CacheGeometry::new(8192, 4, 64, 32).unwrap();
        let mut a = Snapshot::empty(geom, 0, 10, ModeFlags::default());
        a.records[3] = SnapshotRecord::new(Pid(3), 0x400040);
        a.layouts.insert(Pid(3), standard_layout());
        let b = Snapshot::empty(geom, 1, 20, ModeFlags::default());
        store.write(&a).unwrap();
        store.write(&b).unwrap();
        let loaded = SnapshotStore::open(tmp.path()).unwrap().load_all().unwrap();
        assert_eq!(loaded, vec![a, b]);
    }

    #[test]
    fn corrupt_file_reports_path_and_offset() {
        let tmp = tempfile::tempdir().unwrap();
        let store = SnapshotStore::create(tmp.path()).unwrap();
        let geom = CacheGeometry::new(8192, 4, 64, 32).unwrap();
        let path = store.write(&Snapshot::empty(geom, 0, 0, ModeFlags::default())).unwrap()[0].clone();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..100]).unwrap();
        match store.load_file(&path) {
            Err(ShutterError::Corrupt { offset, .. }) => assert_eq!(offset, 100),
            other => panic!("unexpected {other:?}"),
        }
    }
}
