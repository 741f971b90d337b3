//! Batch orchestration around the search core.
//!
//! The binary (`lps`) wires these modules together; they are exposed as a
//! library so integration tests can drive jobs without shelling out.
//!
//! - [`config`]: the TOML job file (providers, search tunables, dataset,
//!   output locations).
//! - [`dataset`]: JSONL dataset ingestion and image resolution.
//! - [`trace`]: append-only JSONL decode traces plus the offline verifier.
//! - [`report`]: metric computation from a trace joined with its dataset.
//! - [`runner`]: the parallel job loop (workers decode, one writer owns the
//!   trace file).

pub mod config;
pub mod dataset;
pub mod report;
pub mod runner;
pub mod trace;
