//! Evaluation engine for kernel benchmarks.
//!
//! The crate is split along the evaluation pipeline:
//!
//! - [`model`]: domain types shared by every stage (registry, payloads, run
//!   records, threshold manifests, scorecards).
//! - [`discrepancy`]: per-family distance between candidate and reference
//!   outputs.
//! - [`calibration`]: derivation of the indistinguishability band and the
//!   quality-cliff threshold, and manifest freezing/scaling.
//! - [`scoring`]: calibrated correctness, validity, coverage, blended
//!   speedups and macro aggregation into a [`model::ScoreCard`].
//! - [`statistics`]: bootstrap intervals, tolerance sweeps and harness-gap
//!   accounting.
//! - [`harness`]: the subprocess-isolated execution engine, task DAG,
//!   capture/replay and the multi-rank all-reduce check.
//! - [`routing`]: expert-load histograms, Gini skew and hot-expert overlap.
//! - [`format`] and [`report`]: on-disk documents and delimited tables.

pub mod calibration;
pub mod discrepancy;
pub mod format;
pub mod harness;
pub mod model;
pub mod report;
pub mod routing;
pub mod scoring;
pub mod statistics;

pub use model::{
    BenchmarkItem, DiscrepancyKind, Dtype, DtypeTolerance, FamilySpec, ItemThreshold,
    OutputPayload, PayloadKind, Registry, RunRecord, RunStatus, ScenarioResult, ScoreCard,
    TaskNode, ThresholdManifest,
};
