//! Shared set-associative PIPT cache: geometry, replacement policies, the
//! tag-memory introspection port and flush/trash helpers.

mod geometry;
mod policy;
mod state;

pub use geometry::{AddressParts, CacheGeometry};
pub use policy::ReplacementPolicy;
pub use state::{AccessResult, CacheState, CacheStats, Eviction, FlushStyle, LineState};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CacheError {
    #[error("invalid cache geometry: {0}")]
    Geometry(String),
    #[error("invalid replacement policy: {0}")]
    Policy(String),
    #[error("physical address {addr:#x} exceeds {bits}-bit address space")]
    AddressRange { addr: u64, bits: u32 },
    #[error("introspection coordinates out of range: way {way}, set {set}")]
    Coordinates { way: u32, set: u64 },
    #[error("uncached access to {0:#x}")]
    Uncached(u64),
}
