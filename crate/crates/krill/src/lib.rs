//! krill — scatter-gather pipeline orchestration for sequence analysis.
//!
//! The library is organized around a small number of subsystems:
//!
//! - [`seq`]: streaming FASTA/FASTQ I/O, quality and length filtering,
//!   masking, and record-boundary-aware split/merge partitioning.
//! - [`taxonomy`]: rooted taxonomy trees, least-common-ancestor read
//!   classification, and hierarchical count summaries.
//! - [`annotation`]: gene predictions plus per-tool evidence tables merged
//!   into annotation records, exported as TSV or Metarep-style JSONL.
//! - [`pipeline`]: declarative pipeline definitions (TOML), validation, and
//!   placeholder-based command templates.
//! - [`exec`]: the workflow manager — task planning, a pluggable backend
//!   contract, failure inference from exit codes / output files / logs, and
//!   blocking end-to-end pipeline runs.
//! - [`sim`]: a deterministic discrete-event simulation of a batch HPC
//!   cluster (gang allocation, priority queue, per-node straggler slowdowns)
//!   usable standalone or as an executor backend.
//! - [`metrics`] and [`report`]: median-of-runs execution-time breakdowns,
//!   speedup/efficiency tables, and deterministic run reports.
//!
//! Each major capability has a runnable example under `examples/`; start
//! with `run_local_pipeline` for the end-to-end picture.

pub mod annotation;
pub mod exec;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod seq;
pub mod sim;
pub mod taxonomy;

mod util;

pub use util::fmt_f64;
