//! Simulation and analysis of shared last-level cache content snapshots.
//!
//! The pieces fit together as follows: [`workload`] drives synthetic
//! processes through a [`cache::CacheState`] and a [`vm::VirtualMemory`];
//! a [`shutter::Trigger`] periodically (or on request) sweeps the cache's
//! tag memory into [`shutter::Snapshot`]s; [`analysis`] turns snapshot
//! sequences into heat-maps, occupancy timelines, working-set profiles and
//! replacement statistics. [`experiment`] packages the standard protocols.

pub mod analysis;
pub mod cache;
pub mod experiment;
pub mod rng;
pub mod shutter;
pub mod vm;
pub mod workload;
