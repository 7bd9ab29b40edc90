//! Subprocess-isolated execution engine.
//!
//! - Tier 1 ([`Harness::run_pair`]): reference and candidate kernels run in
//!   separate worker processes on captured inputs.
//! - Tier 2 ([`Harness::run_e2e`]): the composed model pipeline runs end to
//!   end and every sub-kernel call is captured into bundles.
//! - Tier 3 ([`Harness::run_eval_sweep`]): every agent's bindings are run on
//!   the standard bundles and scored.
//!
//! Built-in kernels are addressed as `builtin:<kernel>[:<variant>]` and are
//! served by a launcher process (the `fk-worker` binary or `fk worker`). Any
//! other locator is an executable that speaks the wire protocol itself.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrepancy::DiscrepancyError;
use crate::model::{check_id, ModelError, OutputPayload};
use crate::scoring::ScoringError;

pub mod allreduce;
pub mod dag;
pub mod kernels;
pub mod protocol;
pub mod runner;
pub mod suite;
pub mod worker;

pub use allreduce::{allreduce_check, allreduce_oracle, AllreduceOutcome, AllreduceScenario};
pub use dag::{register_task_graph, TaskGraph};
pub use kernels::{BuiltinLocator, Kernel, Variant};
pub use protocol::{WorkerFailure, WorkerLauncher};
pub use runner::{E2eResult, Harness, ReplayCheck, ScenarioTiming};
pub use suite::{standard_suite, Suite};

pub const DEFAULT_TIMEOUT_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("task `{0}` registered twice")]
    DuplicateTask(String),
    #[error("task `{task}` (L{level}) depends on `{dependency}` (L{dependency_level}); dependencies must sit at lower levels")]
    LevelViolation { task: String, level: u8, dependency: String, dependency_level: u8 },
    #[error("task `{task}` depends on unregistered `{dependency}`")]
    DanglingDependency { task: String, dependency: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("cannot resolve worker locator `{0}`")]
    UnresolvableLocator(String),
    #[error("failed to spawn `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reference runner failed on item `{item}` scenario `{scenario}`: {reason}")]
    ReferenceFailure { item: String, scenario: String, reason: String },
    #[error("composition failure: {0}")]
    CompositionFailure(String),
    #[error("manifest must be frozen before an evaluation sweep")]
    UnfrozenManifest,
    #[error("collective channel timed out after {0} s")]
    ChannelTimeout(f64),
    #[error("bundle does not match item `{item}`: {reason}")]
    BundleMismatch { item: String, reason: String },
    #[error("all-reduce needs at least 2 ranks, got {0}")]
    TooFewRanks(usize),
    #[error("invalid timeout {0}")]
    InvalidTimeout(f64),
    #[error(transparent)]
    Kernel(#[from] kernels::KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discrepancy(#[from] DiscrepancyError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkerRole {
    Reference,
    Candidate,
}

impl WorkerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkerRole::Reference => "reference",
            WorkerRole::Candidate => "candidate",
        }
    }
}

/// A kernel implementation to run in its own process.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerProgram {
    pub locator: String,
    pub role: WorkerRole,
    pub timeout_s: f64,
}

impl WorkerProgram {
    /// Checks that the locator names a built-in kernel or an existing file.
    pub fn new(locator: impl Into<String>, role: WorkerRole) -> Result<Self, HarnessError> {
        let locator = locator.into();
        if locator.starts_with(kernels::BUILTIN_PREFIX) {
            BuiltinLocator::parse(&locator).map_err(|_| HarnessError::UnresolvableLocator(locator.clone()))?;
        } else if !Path::new(&locator).is_file() {
            return Err(HarnessError::UnresolvableLocator(locator));
        }
        Ok(WorkerProgram { locator, role, timeout_s: DEFAULT_TIMEOUT_S })
    }

    pub fn reference(locator: impl Into<String>) -> Result<Self, HarnessError> {
        Self::new(locator, WorkerRole::Reference)
    }

    pub fn candidate(locator: impl Into<String>) -> Result<Self, HarnessError> {
        Self::new(locator, WorkerRole::Candidate)
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Result<Self, HarnessError> {
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(HarnessError::InvalidTimeout(timeout_s));
        }
        self.timeout_s = timeout_s;
        Ok(self)
    }

    pub fn is_builtin(&self) -> bool {
        self.locator.starts_with(kernels::BUILTIN_PREFIX)
    }

    /// Program and arguments that start this worker.
    pub fn command(&self, launcher: &WorkerLauncher) -> (String, Vec<String>) {
        if self.is_builtin() {
            (launcher.program.clone(), launcher.args.clone())
        } else {
            (self.locator.clone(), Vec::new())
        }
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Mean,
}

/// Warmup and timed-run counts applied to every scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingProtocol {
    pub warmup_iters: u32,
    pub timed_runs: u32,
    pub reduction: Reduction,
    /// Minimum wall time of one timed run; short kernels are repeated and
    /// averaged within the run.
    pub min_batch_s: f64,
}

impl Default for TimingProtocol {
    fn default() -> Self {
        TimingProtocol { warmup_iters: 10, timed_runs: 3, reduction: Reduction::Mean, min_batch_s: 0.0005 }
    }
}

impl TimingProtocol {
    pub fn reduce(&self, times: &[f64]) -> f64 {
        match self.reduction {
            Reduction::Mean => times.iter().sum::<f64>() / times.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaptureSource {
    EndToEndRun,
    Synthetic,
}

impl CaptureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptureSource::EndToEndRun => "end-to-end-run",
            CaptureSource::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureScenario {
    pub scenario_id: String,
    pub inputs: Vec<OutputPayload>,
    /// Reference output recorded at capture time, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputPayload>,
}

/// Golden inputs for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BundleRepr")]
pub struct CaptureBundle {
    pub bundle_id: String,
    pub item_id: String,
    pub scenarios: Vec<CaptureScenario>,
    pub source: CaptureSource,
    pub seed: u64,
}

#[derive(Deserialize)]
struct BundleRepr {
    bundle_id: String,
    item_id: String,
    scenarios: Vec<CaptureScenario>,
    source: CaptureSource,
    seed: u64,
}

impl TryFrom<BundleRepr> for CaptureBundle {
    type Error = ModelError;

    fn try_from(r: BundleRepr) -> Result<Self, ModelError> {
        CaptureBundle::new(r.bundle_id, r.item_id, r.scenarios, r.source, r.seed)
    }
}

impl CaptureBundle {
    pub fn new(
        bundle_id: impl Into<String>,
        item_id: impl Into<String>,
        scenarios: Vec<CaptureScenario>,
        source: CaptureSource,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let bundle = CaptureBundle { bundle_id: bundle_id.into(), item_id: item_id.into(), scenarios, source, seed };
        check_id(&bundle.bundle_id)?;
        check_id(&bundle.item_id)?;
        if bundle.scenarios.is_empty() {
            return Err(ModelError::EmptyScenarioList(bundle.item_id));
        }
        let mut seen = BTreeSet::new();
        for s in &bundle.scenarios {
            check_id(&s.scenario_id)?;
            if !seen.insert(s.scenario_id.as_str()) {
                return Err(ModelError::DuplicateId(s.scenario_id.clone()));
            }
        }
        Ok(bundle)
    }

    pub fn scenario_ids(&self) -> Vec<String> {
        self.scenarios.iter().map(|s| s.scenario_id.clone()).collect()
    }
}

/// Which implementation an agent submits for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentBinding {
    pub agent_id: String,
    pub item_id: String,
    pub locator: String,
}

impl AgentBinding {
    pub fn new(agent_id: impl Into<String>, item_id: impl Into<String>, locator: impl Into<String>) -> Self {
        AgentBinding { agent_id: agent_id.into(), item_id: item_id.into(), locator: locator.into() }
    }
}
