//! Snapshot acquisition over the introspection port, the binary snapshot
//! format, and the on-disk snapshot store.

mod acquire;
pub mod format;
mod snapshot;
mod store;

use thiserror::Error;

pub use acquire::{acquire, FnSink, ShutterConfig, SnapshotSink, Trigger};
pub use format::{deserialize, encoded_len, serialize};
pub use snapshot::{pollution, ModeFlags, Snapshot, SnapshotRecord};
pub use store::{SnapshotStore, StoreSink, SNAPSHOT_DIR, SNAPSHOT_EXT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShutterError {
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("{path}: format error at byte {offset}: {msg}")]
    Corrupt { path: String, offset: usize, msg: String },
    #[error("{0}")]
    Geometry(String),
    #[error("snapshot store full: {reserved} slots reserved for transparent mode")]
    Capacity { reserved: u64 },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path}: bad layout: {msg}")]
    Layout { path: String, msg: String },
}
