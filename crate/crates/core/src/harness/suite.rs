//! The standard desk-scale suite: registry, task graph, golden bundles and
//! a frozen manifest, all generated from one seed.
//!
//! Inputs of the model sub-kernels are captured from an end-to-end run of
//! the reference pipeline, so the per-kernel items see exactly the tensors
//! the full model produces. Kernels outside the pipeline get synthetic
//! inputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dag::{register_task_graph, TaskGraph};
use super::kernels::{execute, BuiltinLocator, Capture, Context, Kernel, Variant};
use super::{CaptureBundle, CaptureScenario, CaptureSource, HarnessError};
use crate::calibration::{calibrate_g, freeze_manifest};
use crate::model::{
    validate_registry, BenchmarkItem, DiscrepancyKind, Dtype, DtypeTolerance, FamilySpec, OutputPayload,
    Registry, TaskNode, ThresholdManifest, DEFAULT_TAU,
};

pub const SUITE_SEED: u64 = 42;
pub const HIDDEN: usize = 16;
pub const FFN: usize = 32;
pub const TOKENS: usize = 4;
pub const LAYERS: usize = 2;
pub const PROMPTS: usize = 4;
pub const ALLREDUCE_RANKS: usize = 4;
pub const ALLREDUCE_LEN: usize = 32;
const SYNTHETIC_SCENARIOS: usize = 4;

/// Everything a Tier-3 sweep needs.
#[derive(Debug, Clone)]
pub struct Suite {
    pub registry: Registry,
    pub graph: TaskGraph,
    pub bundles: BTreeMap<String, CaptureBundle>,
    pub manifest: ThresholdManifest,
    /// The end-to-end workload the model bundles were captured from.
    pub workload: Vec<CaptureScenario>,
    pub seed: u64,
}

struct Gen {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Gen {
    fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), normal: Normal::new(0.0, 1.0).expect("unit normal") }
    }

    fn tensor(&mut self, shape: Vec<usize>, scale: f64) -> OutputPayload {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.normal.sample(&mut self.rng) * scale).collect();
        OutputPayload::tensor(shape, values).expect("consistent shape")
    }

    /// Multiples of 1/8 in [-100, 100]: every summation order is exact.
    fn dyadic(&mut self, len: usize) -> OutputPayload {
        let values = (0..len).map(|_| f64::from(self.rng.random_range(-800i32..=800)) / 8.0).collect();
        OutputPayload::vector(values).expect("nonempty")
    }
}

/// Per-layer (norm, up, down) weights of the toy model.
pub fn model_weights(seed: u64) -> Vec<OutputPayload> {
    let mut g = Gen::new(seed ^ 0x5eed);
    let mut out = Vec::with_capacity(3 * LAYERS);
    for _ in 0..LAYERS {
        let norm = (0..HIDDEN).map(|_| 1.0 + 0.1 * g.normal.sample(&mut g.rng)).collect();
        out.push(OutputPayload::vector(norm).expect("nonempty"));
        out.push(g.tensor(vec![HIDDEN, FFN], 1.0 / (HIDDEN as f64).sqrt()));
        out.push(g.tensor(vec![FFN, HIDDEN], 1.0 / (FFN as f64).sqrt()));
    }
    out
}

/// `prompts` model inputs: a `[TOKENS, HIDDEN]` activation followed by the
/// shared weights.
pub fn model_workload(seed: u64, prompts: usize) -> Vec<CaptureScenario> {
    let weights = model_weights(seed);
    let mut g = Gen::new(seed);
    (0..prompts)
        .map(|p| {
            let mut inputs = vec![g.tensor(vec![TOKENS, HIDDEN], 1.0)];
            inputs.extend(weights.iter().cloned());
            CaptureScenario { scenario_id: format!("p{p}"), inputs, output: None }
        })
        .collect()
}

/// Groups the sub-kernel calls of each scenario into one bundle per kernel.
/// Scenario ids are `<scenario>.<n>` with `n` counting that kernel's calls.
pub fn bundles_from_captures(
    runs: &[(String, Vec<Capture>)],
    graph: &TaskGraph,
    prefix: &str,
    source: CaptureSource,
    seed: u64,
) -> Result<Vec<CaptureBundle>, HarnessError> {
    let mut grouped: BTreeMap<String, Vec<CaptureScenario>> = BTreeMap::new();
    for (scenario, captures) in runs {
        let mut counters: BTreeMap<&str, usize> = BTreeMap::new();
        for c in captures {
            let n = counters.entry(c.kernel.as_str()).or_default();
            let item = graph.node(&c.kernel).map_or_else(|| c.kernel.clone(), |t| t.item_id.clone());
            grouped.entry(item).or_default().push(CaptureScenario {
                scenario_id: format!("{scenario}.{n}"),
                inputs: c.inputs.clone(),
                output: Some(c.output.clone()),
            });
            *n += 1;
        }
    }
    grouped
        .into_iter()
        .map(|(item, scenarios)| Ok(CaptureBundle::new(format!("{prefix}-{item}"), item, scenarios, source, seed)?))
        .collect()
}

/// Runs the reference pipeline in-process and returns each scenario's
/// sub-kernel calls followed by the top-level call.
pub fn capture_in_process(
    kernel: Kernel,
    workload: &[CaptureScenario],
    slots: &BTreeMap<String, String>,
) -> Result<Vec<(String, Vec<Capture>)>, HarnessError> {
    let loc = BuiltinLocator::reference(kernel);
    workload
        .iter()
        .map(|sc| {
            let mut sink = Vec::new();
            let out = execute(loc, &sc.inputs, &mut Context::capturing(slots, &mut sink))
                .map_err(|e| HarnessError::CompositionFailure(e.to_string()))?;
            sink.push(Capture { kernel: kernel.name().to_string(), inputs: sc.inputs.clone(), output: out });
            Ok((sc.scenario_id.clone(), sink))
        })
        .collect()
}

fn synthetic(item: &str, seed: u64, mut make: impl FnMut(&mut Gen) -> Vec<OutputPayload>) -> Result<CaptureBundle, HarnessError> {
    let mut g = Gen::new(seed.wrapping_add(item.bytes().map(u64::from).sum::<u64>()));
    let scenarios = (0..SYNTHETIC_SCENARIOS)
        .map(|i| CaptureScenario { scenario_id: format!("s{i}"), inputs: make(&mut g), output: None })
        .collect();
    Ok(CaptureBundle::new(format!("std-{item}"), item, scenarios, CaptureSource::Synthetic, seed)?)
}

fn attach_reference_outputs(bundle: &mut CaptureBundle, kernel: Kernel) -> Result<(), HarnessError> {
    if kernel == Kernel::Allreduce {
        for sc in &mut bundle.scenarios {
            sc.output = Some(super::allreduce::allreduce_oracle(&sc.inputs)?);
        }
        return Ok(());
    }
    let slots = BTreeMap::new();
    for sc in &mut bundle.scenarios {
        let out = execute(BuiltinLocator::reference(kernel), &sc.inputs, &mut Context::new(&slots))
            .map_err(|e| HarnessError::CompositionFailure(e.to_string()))?;
        sc.output = Some(out);
    }
    Ok(())
}

/// Families, tasks and their kernels, in registration order.
const TASKS: [(&str, u8, &[&str], &str); 11] = [
    ("linear", 1, &[], "dense"),
    ("rmsnorm", 1, &[], "dense"),
    ("silu", 1, &[], "dense"),
    ("softmax", 1, &[], "dense"),
    ("matmul", 1, &[], "dense"),
    ("topk_gate", 1, &[], "moe"),
    ("argsort", 1, &[], "retrieval"),
    ("allreduce", 1, &[], "collective"),
    ("mlp", 2, &["linear", "silu"], "dense"),
    ("block", 3, &["rmsnorm", "mlp"], "dense"),
    ("model", 4, &["block"], "dense"),
];

pub fn standard_families() -> Result<Vec<FamilySpec>, HarnessError> {
    Ok(vec![
        FamilySpec::new("dense", DiscrepancyKind::ElementwiseNumeric, 4.0, DEFAULT_TAU)?,
        FamilySpec::new("moe", DiscrepancyKind::TokenSequence, 0.5, DEFAULT_TAU)?,
        FamilySpec::new("retrieval", DiscrepancyKind::RankingTopk, 0.5, DEFAULT_TAU)?.with_rank_k(20)?,
        FamilySpec::new("collective", DiscrepancyKind::ElementwiseNumeric, 4.0, DEFAULT_TAU)?,
    ])
}

pub fn standard_graph() -> Result<TaskGraph, HarnessError> {
    let nodes = TASKS
        .iter()
        .map(|(id, level, deps, _)| TaskNode::new(*id, *id, *level, deps.iter().copied()))
        .collect::<Result<Vec<_>, _>>()?;
    register_task_graph(nodes)
}

/// Input vectors of `ranks` ranks for one all-reduce scenario.
pub fn allreduce_inputs(seed: u64, ranks: usize, len: usize) -> Vec<OutputPayload> {
    let mut g = Gen::new(seed);
    (0..ranks).map(|_| g.dyadic(len)).collect()
}

fn synthetic_bundles(seed: u64) -> Result<Vec<CaptureBundle>, HarnessError> {
    let mut out = vec![
        synthetic("softmax", seed, |g| vec![g.tensor(vec![TOKENS, HIDDEN], 2.0)])?,
        synthetic("matmul", seed, |g| vec![g.tensor(vec![8, 12], 1.0), g.tensor(vec![12, 8], 1.0)])?,
        synthetic("topk_gate", seed, |g| vec![g.tensor(vec![16, 32], 1.0), OutputPayload::scalar(2.0)])?,
        synthetic("argsort", seed, |g| vec![g.tensor(vec![64], 1.0)])?,
        synthetic("allreduce", seed, |g| (0..ALLREDUCE_RANKS).map(|_| g.dyadic(ALLREDUCE_LEN)).collect())?,
    ];
    for b in &mut out {
        let kernel: Kernel = b.item_id.parse()?;
        attach_reference_outputs(b, kernel)?;
    }
    Ok(out)
}

/// Indistinguishability band of a numeric item: reference against the
/// reordered variant on every captured scenario.
fn numeric_band(bundle: &CaptureBundle, kernel: Kernel, tol: &DtypeTolerance) -> Result<f64, HarnessError> {
    let slots = BTreeMap::new();
    let mut g: f64 = 0.0;
    for sc in &bundle.scenarios {
        let run = |variant| {
            execute(BuiltinLocator { kernel, variant }, &sc.inputs, &mut Context::new(&slots))
                .map_err(|e| HarnessError::CompositionFailure(e.to_string()))
        };
        let replicates = [run(Variant::Reference)?, run(Variant::Reordered)?];
        g = g.max(calibrate_g(&replicates, tol).map_err(|e| HarnessError::CompositionFailure(e.to_string()))?);
    }
    Ok(g)
}

/// Builds the standard suite from `seed`.
pub fn standard_suite(seed: u64) -> Result<Suite, HarnessError> {
    let families = standard_families()?;
    let graph = standard_graph()?;
    let workload = model_workload(seed, PROMPTS);
    let runs = capture_in_process(Kernel::Model, &workload, &BTreeMap::new())?;
    let mut bundles: BTreeMap<String, CaptureBundle> = BTreeMap::new();
    for b in bundles_from_captures(&runs, &graph, "std", CaptureSource::EndToEndRun, seed)? {
        bundles.insert(b.item_id.clone(), b);
    }
    for b in synthetic_bundles(seed)? {
        bundles.insert(b.item_id.clone(), b);
    }

    let mut items = Vec::new();
    for (id, level, _, family) in TASKS {
        let bundle = bundles.get(id).ok_or_else(|| HarnessError::CompositionFailure(format!("no bundle for `{id}`")))?;
        items.push(BenchmarkItem::new(id, family, level, Dtype::Fp32, bundle.scenario_ids(), format!("builtin:{id}"))?);
    }
    let registry = validate_registry(families, items)?;

    let table = DtypeTolerance::default_table();
    let tol = DtypeTolerance::default_for(Dtype::Fp32);
    let mut per_item = BTreeMap::new();
    for item in registry.items() {
        let family = registry.family(&item.family_id).expect("validated");
        let kernel: Kernel = item.item_id.parse()?;
        let g = match family.discrepancy_kind {
            DiscrepancyKind::ElementwiseNumeric if kernel != Kernel::Allreduce => numeric_band(&bundles[&item.item_id], kernel, &tol)?,
            DiscrepancyKind::ElementwiseNumeric => crate::calibration::BAND_FLOOR,
            _ => 0.0,
        };
        let f = family.default_fail_threshold.max(2.0 * g);
        per_item.insert(item.item_id.clone(), (g, f, None));
    }
    let manifest = freeze_manifest(&per_item, table, DEFAULT_TAU)
        .map_err(|e| HarnessError::CompositionFailure(e.to_string()))?;
    Ok(Suite { registry, graph, bundles, manifest, workload, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_deterministic_and_complete() {
        let a = standard_suite(SUITE_SEED).unwrap();
        let b = standard_suite(SUITE_SEED).unwrap();
        assert_eq!(a.bundles, b.bundles);
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.registry.item_count(), TASKS.len());
        assert_eq!(a.registry.family_count(), 4);
        // 2 linear calls per layer, 2 layers, 4 prompts
        assert_eq!(a.bundles["linear"].scenarios.len(), 16);
        assert_eq!(a.bundles["model"].scenarios.len(), PROMPTS);
        assert_eq!(a.bundles["mlp"].source, CaptureSource::EndToEndRun);
        for item in a.registry.items() {
            let t = a.manifest.threshold(&item.item_id).unwrap();
            assert!(t.g < t.f);
        }
    }

    #[test]
    fn captured_sub_kernel_outputs_replay_exactly() {
        let suite = standard_suite(SUITE_SEED).unwrap();
        for id in ["linear", "silu", "rmsnorm", "mlp", "block", "model"] {
            let kernel: Kernel = id.parse().unwrap();
            for sc in &suite.bundles[id].scenarios {
                let out = super::super::kernels::run_reference(kernel, &sc.inputs).unwrap();
                assert!(out.bit_eq(sc.output.as_ref().unwrap()), "{id} {}", sc.scenario_id);
            }
        }
    }

    #[test]
    fn allreduce_data_sums_exactly() {
        let inputs = allreduce_inputs(3, 4, 32);
        let mut forward = vec![0.0; 32];
        let mut backward = vec![0.0; 32];
        for p in &inputs {
            for (s, v) in forward.iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        for p in inputs.iter().rev() {
            for (s, v) in backward.iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        assert_eq!(forward, backward);
    }
}
