//! Pure functions over snapshot sequences: heat-maps, occupancy, working-set
//! profiles, interference metrics and replacement statistics.

mod heatmap;
mod metrics;
mod occupancy;
mod replacement;

use thiserror::Error;

pub use heatmap::{find_region, heatmap, heatmap_in, HeatMap};
pub use metrics::{active_set_excess, pearson, profiles, reused_set_eviction, Profile};
pub use occupancy::{occupancy, OccupancyRow};
pub use replacement::{
    replacement_density, resident_count, set_decision, way_decision, WayDecision, WayFrequency,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("pid {pid} has no region named {region:?} in any captured layout")]
    UnknownRegion { pid: u64, region: String },
    #[error("no snapshots to analyse")]
    Empty,
    #[error("series lengths differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("snapshots do not share one geometry")]
    Geometry,
    #[error("snapshot {0} was not taken in flush mode")]
    NotFlushed(u32),
}
