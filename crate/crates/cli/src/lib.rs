//! Plumbing behind the `gpvol` binary: CSV ingestion, flat-file
//! configuration, experiment orchestration, and report emission.
//!
//! Everything here is deterministic under a fixed configuration and seed —
//! output files carry no wall-clock timestamps and parallel runs are merged
//! in job order, so repeated invocations are byte-identical.

pub mod compare;
pub mod config;
pub mod data;
pub mod report;
