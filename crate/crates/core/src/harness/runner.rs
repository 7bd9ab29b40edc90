//! Tier 1-3 orchestration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::allreduce::{allreduce_oracle, run_collective};
use super::kernels::{BuiltinLocator, Kernel};
use super::protocol::{KernelRequest, KernelResponse, WorkerFailure, WorkerLauncher, WorkerSession};
use super::suite::{bundles_from_captures, Suite};
use super::{AgentBinding, CaptureBundle, CaptureScenario, CaptureSource, HarnessError, TimingProtocol, WorkerProgram};
use crate::discrepancy::{dispatch_discrepancy, elementwise_error_ratio};
use crate::model::{
    BenchmarkItem, DtypeTolerance, FamilySpec, ModelError, OutputPayload, RunRecord, RunStatus,
    ScenarioResult, ScoreCard, ThresholdManifest,
};
use crate::scoring::build_scorecard;

/// Per-scenario measurements of an end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTiming {
    pub scenario_id: String,
    pub runtime_s: f64,
    pub throughput: f64,
    pub latency_s: f64,
    pub run_times_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eResult {
    pub task_id: String,
    pub measurements: Vec<ScenarioTiming>,
    pub outputs: Vec<OutputPayload>,
    pub bundles: Vec<CaptureBundle>,
}

/// Result of replaying one stored scenario into the reference runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub bundle_id: String,
    pub scenario_id: String,
    pub bit_exact: bool,
    #[serde(with = "crate::format::float")]
    pub d: f64,
}

pub struct Harness {
    pub launcher: WorkerLauncher,
    pub suite: Suite,
    pub protocol: TimingProtocol,
    pub timeout_s: f64,
}

/// Work units per call, used to turn runtimes into throughput: the leading
/// dimension of the first input.
fn work_units(inputs: &[OutputPayload]) -> f64 {
    inputs.first().and_then(|p| p.shape().first().copied()).unwrap_or(1) as f64
}

/// Candidate output problems that make a run invalid before any
/// discrepancy is computed.
fn output_fault(cand: &OutputPayload, reference: &OutputPayload) -> Option<RunStatus> {
    if cand.kind() != reference.kind() {
        Some(RunStatus::TypeError)
    } else if cand.shape() != reference.shape() {
        Some(RunStatus::ShapeError)
    } else if cand.has_nan() {
        Some(RunStatus::Nan)
    } else {
        None
    }
}

impl Harness {
    pub fn new(launcher: WorkerLauncher, suite: Suite) -> Self {
        Harness { launcher, suite, protocol: TimingProtocol::default(), timeout_s: super::DEFAULT_TIMEOUT_S }
    }

    pub fn with_protocol(mut self, protocol: TimingProtocol) -> Self {
        self.protocol = protocol;
        self
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Result<Self, HarnessError> {
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(HarnessError::InvalidTimeout(timeout_s));
        }
        self.timeout_s = timeout_s;
        Ok(self)
    }

    fn item(&self, item_id: &str) -> Result<(&BenchmarkItem, &FamilySpec), HarnessError> {
        let item = self.suite.registry.item(item_id).ok_or_else(|| HarnessError::UnknownItem(item_id.to_string()))?;
        let family = self.suite.registry.family(&item.family_id).expect("registry is validated");
        Ok((item, family))
    }

    /// Candidate slot bindings for an item: its task's resolved composition,
    /// or nothing when the item has no task.
    pub fn candidate_slots(&self, item_id: &str) -> Result<BTreeMap<String, String>, HarnessError> {
        match self.suite.graph.task_for_item(item_id) {
            Some(task) => self.suite.graph.resolve_composition(&task.task_id, &self.suite.registry),
            None => Ok(BTreeMap::new()),
        }
    }

    fn program(&self, locator: &str, reference: bool) -> Result<WorkerProgram, HarnessError> {
        let p = if reference { WorkerProgram::reference(locator)? } else { WorkerProgram::candidate(locator)? };
        p.with_timeout(self.timeout_s)
    }

    fn request(&self, seq: u64, locator: &str, sc: &CaptureScenario, slots: &BTreeMap<String, String>, capture: bool) -> KernelRequest {
        KernelRequest {
            seq,
            locator: locator.to_string(),
            inputs: sc.inputs.clone(),
            slots: slots.clone(),
            warmup: self.protocol.warmup_iters,
            timed_runs: self.protocol.timed_runs,
            min_batch_s: self.protocol.min_batch_s,
            capture,
        }
    }

    /// Tier 1: reference and `candidate` in separate processes on every
    /// scenario of `bundle`. Candidate slots follow the task graph.
    pub fn run_pair(
        &self,
        agent_id: &str,
        item_id: &str,
        candidate: &WorkerProgram,
        bundle: &CaptureBundle,
    ) -> Result<RunRecord, HarnessError> {
        let slots = self.candidate_slots(item_id)?;
        self.run_pair_with(agent_id, item_id, candidate, bundle, &slots, &self.suite.manifest)
    }

    pub fn run_pair_with(
        &self,
        agent_id: &str,
        item_id: &str,
        candidate: &WorkerProgram,
        bundle: &CaptureBundle,
        slots: &BTreeMap<String, String>,
        manifest: &ThresholdManifest,
    ) -> Result<RunRecord, HarnessError> {
        let (item, family) = self.item(item_id)?;
        if bundle.item_id != item.item_id {
            return Err(HarnessError::BundleMismatch {
                item: item.item_id.clone(),
                reason: format!("bundle is for `{}`", bundle.item_id),
            });
        }
        let tol = manifest.tolerance_for(item.dtype);
        let reference = self.program(&item.reference_runner, true)?;
        if BuiltinLocator::parse(&reference.locator).is_ok_and(|l| l.kernel == Kernel::Allreduce) {
            return self.run_collective_pair(agent_id, item, family, candidate, &reference, bundle, &tol);
        }

        let (cmd, args) = reference.command(&self.launcher);
        let mut ref_session = WorkerSession::spawn(&cmd, &args, reference.role.as_str())?;
        let (cmd, args) = candidate.command(&self.launcher);
        let mut cand_session = match WorkerSession::spawn(&cmd, &args, candidate.role.as_str()) {
            Ok(s) => s,
            Err(_) => return Ok(RunRecord::failed(agent_id, item_id, RunStatus::Crash)?),
        };

        let no_slots = BTreeMap::new();
        let mut scenarios = Vec::with_capacity(bundle.scenarios.len());
        let mut failure = None;
        for (seq, sc) in bundle.scenarios.iter().enumerate() {
            let ref_resp = ref_session
                .call(self.request(seq as u64, &reference.locator, sc, &no_slots, false), reference.timeout())
                .map_err(|f| reference_failure(item, sc, &f.describe()))?;
            if ref_resp.output.has_nan() {
                return Err(reference_failure(item, sc, "reference emitted NaN"));
            }
            let cand_resp = match cand_session.call(self.request(seq as u64, &candidate.locator, sc, slots, false), candidate.timeout()) {
                Ok(r) => r,
                Err(f) => {
                    failure = Some(f.status());
                    break;
                }
            };
            if let Some(status) = output_fault(&cand_resp.output, &ref_resp.output) {
                failure = Some(status);
                break;
            }
            let mut result = self.scenario_result(&sc.scenario_id, &sc.inputs, ref_resp, cand_resp)?;
            dispatch_discrepancy(family, &mut result, &tol)?;
            scenarios.push(result);
        }
        ref_session.shutdown();
        cand_session.shutdown();
        Ok(match failure {
            Some(status) => RunRecord::failed(agent_id, item_id, status)?,
            None => RunRecord::ok(agent_id, item_id, scenarios)?,
        })
    }

    fn scenario_result(
        &self,
        scenario_id: &str,
        inputs: &[OutputPayload],
        reference: KernelResponse,
        candidate: KernelResponse,
    ) -> Result<ScenarioResult, HarnessError> {
        let units = work_units(inputs);
        let ref_t = self.protocol.reduce(&reference.run_times_s);
        let cand_t = self.protocol.reduce(&candidate.run_times_s);
        let result = ScenarioResult {
            scenario_id: scenario_id.to_string(),
            ref_output: reference.output,
            cand_output: candidate.output,
            ref_runtime_s: ref_t,
            cand_runtime_s: cand_t,
            ref_throughput: units / ref_t,
            cand_throughput: units / cand_t,
            ref_latency_s: ref_t,
            cand_latency_s: cand_t,
            discrepancy: None,
            ref_run_times_s: reference.run_times_s,
            cand_run_times_s: candidate.run_times_s,
        };
        result.validate()?;
        Ok(result)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_collective_pair(
        &self,
        agent_id: &str,
        item: &BenchmarkItem,
        family: &FamilySpec,
        candidate: &WorkerProgram,
        reference: &WorkerProgram,
        bundle: &CaptureBundle,
        tol: &DtypeTolerance,
    ) -> Result<RunRecord, HarnessError> {
        let mut scenarios = Vec::with_capacity(bundle.scenarios.len());
        for sc in &bundle.scenarios {
            if sc.inputs.len() < 2 {
                return Err(HarnessError::TooFewRanks(sc.inputs.len()));
            }
            let oracle = allreduce_oracle(&sc.inputs)?;
            let ref_run = match run_collective(&self.launcher, reference, &sc.inputs)? {
                Ok(r) => r,
                Err(WorkerFailure::Timeout) => return Err(HarnessError::ChannelTimeout(reference.timeout_s)),
                Err(f) => return Err(reference_failure(item, sc, &f.describe())),
            };
            if ref_run.outputs.iter().any(|o| !o.bit_eq(&oracle)) {
                return Err(reference_failure(item, sc, "reference all-reduce disagrees with the elementwise sum"));
            }
            let cand_run = match run_collective(&self.launcher, candidate, &sc.inputs)? {
                Ok(r) => r,
                Err(f) => return Ok(RunRecord::failed(agent_id, &item.item_id, f.status())?),
            };
            if let Some(status) = cand_run.outputs.iter().find_map(|o| output_fault(o, &oracle)) {
                return Ok(RunRecord::failed(agent_id, &item.item_id, status)?);
            }
            let stack = |outs: &[OutputPayload]| {
                let values: Vec<f64> = outs.iter().flat_map(|o| o.values().iter().copied()).collect();
                OutputPayload::tensor(vec![outs.len(), oracle.len()], values)
            };
            let units = oracle.len() as f64;
            let mut result = ScenarioResult {
                scenario_id: sc.scenario_id.clone(),
                ref_output: stack(&ref_run.outputs)?,
                cand_output: stack(&cand_run.outputs)?,
                ref_runtime_s: ref_run.elapsed_s,
                cand_runtime_s: cand_run.elapsed_s,
                ref_throughput: units / ref_run.elapsed_s,
                cand_throughput: units / cand_run.elapsed_s,
                ref_latency_s: ref_run.elapsed_s,
                cand_latency_s: cand_run.elapsed_s,
                discrepancy: None,
                ref_run_times_s: vec![ref_run.elapsed_s],
                cand_run_times_s: vec![cand_run.elapsed_s],
            };
            dispatch_discrepancy(family, &mut result, tol)?;
            scenarios.push(result);
        }
        Ok(RunRecord::ok(agent_id, &item.item_id, scenarios)?)
    }

    /// Replays stored outputs into the reference runner.
    pub fn verify_bundle(&self, bundle: &CaptureBundle) -> Result<Vec<ReplayCheck>, HarnessError> {
        let (item, family) = self.item(&bundle.item_id)?;
        let tol = self.suite.manifest.tolerance_for(item.dtype);
        let reference = self.program(&item.reference_runner, true)?;
        let mut stored = Vec::with_capacity(bundle.scenarios.len());
        for sc in &bundle.scenarios {
            stored.push(sc.output.as_ref().ok_or_else(|| HarnessError::BundleMismatch {
                item: item.item_id.clone(),
                reason: format!("scenario `{}` has no stored output", sc.scenario_id),
            })?);
        }
        let check = |sc: &CaptureScenario, bit_exact: bool, d: f64| ReplayCheck {
            bundle_id: bundle.bundle_id.clone(),
            scenario_id: sc.scenario_id.clone(),
            bit_exact,
            d,
        };
        let mut checks = Vec::with_capacity(bundle.scenarios.len());
        if BuiltinLocator::parse(&reference.locator).is_ok_and(|l| l.kernel == Kernel::Allreduce) {
            // Every rank must reproduce the stored sum.
            for (sc, stored) in bundle.scenarios.iter().zip(stored) {
                let run = run_collective(&self.launcher, &reference, &sc.inputs)?
                    .map_err(|f| reference_failure(item, sc, &f.describe()))?;
                let bit_exact = run.outputs.iter().all(|o| o.bit_eq(stored));
                let mut d: f64 = 0.0;
                for o in &run.outputs {
                    d = d.max(match output_fault(o, stored) {
                        Some(_) => f64::INFINITY,
                        None => elementwise_error_ratio(o, stored, &tol)?.d,
                    });
                }
                checks.push(check(sc, bit_exact, d));
            }
            return Ok(checks);
        }
        let (cmd, args) = reference.command(&self.launcher);
        let mut session = WorkerSession::spawn(&cmd, &args, reference.role.as_str())?;
        let no_slots = BTreeMap::new();
        for (seq, (sc, stored)) in bundle.scenarios.iter().zip(stored).enumerate() {
            let resp = session
                .call(self.request(seq as u64, &reference.locator, sc, &no_slots, false), reference.timeout())
                .map_err(|f| reference_failure(item, sc, &f.describe()))?;
            let bit_exact = resp.output.bit_eq(stored);
            let d = if output_fault(&resp.output, stored).is_some() {
                f64::INFINITY
            } else {
                let mut r = self.scenario_result(&sc.scenario_id, &sc.inputs, resp.clone(), resp)?;
                r.ref_output = stored.clone();
                dispatch_discrepancy(family, &mut r, &tol)?.d
            };
            checks.push(check(sc, bit_exact, d));
        }
        session.shutdown();
        Ok(checks)
    }

    /// Tier 2: runs the composed pipeline of `task_id` over `workload` in a
    /// worker, measuring each scenario and capturing every sub-kernel call.
    pub fn run_e2e(&self, task_id: &str, workload: &[CaptureScenario]) -> Result<E2eResult, HarnessError> {
        if workload.is_empty() {
            return Err(HarnessError::CompositionFailure("empty workload".into()));
        }
        let graph = &self.suite.graph;
        let task = graph.node(task_id).ok_or_else(|| HarnessError::UnknownTask(task_id.to_string()))?;
        let (item, _) = self.item(&task.item_id)?;
        let slots = graph.resolve_composition(task_id, &self.suite.registry)?;
        let program = self.program(&item.reference_runner, true)?;
        let (cmd, args) = program.command(&self.launcher);
        let mut session = WorkerSession::spawn(&cmd, &args, program.role.as_str())?;

        let mut measurements = Vec::with_capacity(workload.len());
        let mut outputs = Vec::with_capacity(workload.len());
        let mut runs = Vec::with_capacity(workload.len());
        for (seq, sc) in workload.iter().enumerate() {
            let resp = session
                .call(self.request(seq as u64, &program.locator, sc, &slots, true), program.timeout())
                .map_err(|f| HarnessError::CompositionFailure(format!("scenario `{}`: {}", sc.scenario_id, f.describe())))?;
            let runtime = self.protocol.reduce(&resp.run_times_s);
            measurements.push(ScenarioTiming {
                scenario_id: sc.scenario_id.clone(),
                runtime_s: runtime,
                throughput: work_units(&sc.inputs) / runtime,
                latency_s: runtime,
                run_times_s: resp.run_times_s.clone(),
            });
            let mut captures = resp.captures;
            captures.push(super::kernels::Capture {
                kernel: task.task_id.clone(),
                inputs: sc.inputs.clone(),
                output: resp.output.clone(),
            });
            outputs.push(resp.output);
            runs.push((sc.scenario_id.clone(), captures));
        }
        session.shutdown();
        let bundles = bundles_from_captures(&runs, graph, "e2e", CaptureSource::EndToEndRun, self.suite.seed)?;
        Ok(E2eResult { task_id: task_id.to_string(), measurements, outputs, bundles })
    }

    /// Tier 3: every agent's bindings on the standard bundles, scored.
    /// Items an agent binds nothing to count as blocked.
    pub fn run_eval_sweep(
        &self,
        bindings: &[AgentBinding],
        manifest: &ThresholdManifest,
    ) -> Result<BTreeMap<String, ScoreCard>, HarnessError> {
        if !manifest.is_frozen() {
            return Err(HarnessError::UnfrozenManifest);
        }
        let mut agents: BTreeMap<&str, BTreeMap<&str, &str>> = BTreeMap::new();
        for b in bindings {
            if self.suite.registry.item(&b.item_id).is_none() {
                return Err(HarnessError::UnknownItem(b.item_id.clone()));
            }
            let prior = agents.entry(b.agent_id.as_str()).or_default().insert(b.item_id.as_str(), b.locator.as_str());
            if prior.is_some() {
                return Err(ModelError::DuplicateId(format!("{}/{}", b.agent_id, b.item_id)).into());
            }
        }
        let mut cards = BTreeMap::new();
        for (agent, items) in agents {
            let mut records = Vec::with_capacity(items.len());
            for (&item_id, &locator) in &items {
                let bundle = self.suite.bundles.get(item_id).ok_or_else(|| HarnessError::BundleMismatch {
                    item: item_id.to_string(),
                    reason: "no standard bundle".into(),
                })?;
                let record = match self.program(locator, false) {
                    Ok(program) => {
                        let slots = self.candidate_slots(item_id)?;
                        self.run_pair_with(agent, item_id, &program, bundle, &slots, manifest)?
                    }
                    Err(HarnessError::UnresolvableLocator(_)) => RunRecord::failed(agent, item_id, RunStatus::Crash)?,
                    Err(e) => return Err(e),
                };
                records.push(record);
            }
            let card = build_scorecard(agent, &self.suite.registry, manifest, &records)?;
            cards.insert(agent.to_string(), card);
        }
        Ok(cards)
    }
}

fn reference_failure(item: &BenchmarkItem, sc: &CaptureScenario, reason: &str) -> HarnessError {
    HarnessError::ReferenceFailure { item: item.item_id.clone(), scenario: sc.scenario_id.clone(), reason: reason.to_string() }
}
