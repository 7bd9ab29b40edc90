//! Routing analytics for mixture-of-experts gates: load histograms, Gini
//! skew and hot-expert overlap, plus toy gates for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::CaptureBundle;
use crate::model::{OutputPayload, PayloadKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("k={k} exceeds the number of experts ({experts})")]
    KExceedsExperts { k: usize, experts: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("expert counts differ: {0} vs {1}")]
    ExpertCountMismatch(usize, usize),
    #[error("top={top} must be in 1..={experts}")]
    InvalidTop { top: usize, experts: usize },
    #[error("gate logits must be a [tokens, experts] tensor")]
    BadLogits,
    #[error("load has no assignments")]
    EmptyLoad,
    #[error("invalid load: {0}")]
    InvalidLoad(String),
}

/// Histogram of (token, slot) assignments per expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LoadRepr")]
pub struct ExpertLoad {
    pub num_experts: usize,
    pub counts: Vec<u64>,
    pub source: String,
}

#[derive(Deserialize)]
struct LoadRepr {
    num_experts: usize,
    counts: Vec<u64>,
    source: String,
}

impl TryFrom<LoadRepr> for ExpertLoad {
    type Error = RoutingError;

    fn try_from(r: LoadRepr) -> Result<Self, RoutingError> {
        if r.num_experts != r.counts.len() {
            return Err(RoutingError::InvalidLoad(format!(
                "num_experts {} but {} counts",
                r.num_experts,
                r.counts.len()
            )));
        }
        ExpertLoad::new(r.counts, r.source)
    }
}

impl ExpertLoad {
    pub fn new(counts: Vec<u64>, source: impl Into<String>) -> Result<Self, RoutingError> {
        if counts.is_empty() {
            return Err(RoutingError::InvalidLoad("no experts".into()));
        }
        if counts.iter().sum::<u64>() == 0 {
            return Err(RoutingError::EmptyLoad);
        }
        Ok(ExpertLoad { num_experts: counts.len(), counts, source: source.into() })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Indices of the `k` largest values, ties to the lower index.
fn top_indices<T: PartialOrd + Copy>(values: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

/// Accumulates top-`k` routing decisions of `[tokens, experts]` logits.
fn accumulate(counts: &mut Vec<u64>, logits: &OutputPayload, k: usize) -> Result<(), RoutingError> {
    if logits.kind() != PayloadKind::NumericTensor || logits.shape().len() != 2 {
        return Err(RoutingError::BadLogits);
    }
    let experts = logits.shape()[1];
    if counts.is_empty() {
        counts.resize(experts, 0);
    } else if counts.len() != experts {
        return Err(RoutingError::ExpertCountMismatch(counts.len(), experts));
    }
    if k == 0 {
        return Err(RoutingError::ZeroK);
    }
    if k > experts {
        return Err(RoutingError::KExceedsExperts { k, experts });
    }
    for row in logits.values().chunks(experts) {
        if row.iter().any(|v| v.is_nan()) {
            return Err(RoutingError::BadLogits);
        }
        for e in top_indices(row, k) {
            counts[e] += 1;
        }
    }
    Ok(())
}

/// Load histogram of gate logits under top-`k` routing.
pub fn expert_load(
    logits: &[OutputPayload],
    k: usize,
    source: impl Into<String>,
) -> Result<ExpertLoad, RoutingError> {
    let mut counts = Vec::new();
    for l in logits {
        accumulate(&mut counts, l, k)?;
    }
    ExpertLoad::new(counts, source)
}

/// Load histogram of a captured gate: the first input of every scenario
/// holds the gate logits.
pub fn expert_load_from_bundle(bundle: &CaptureBundle, k: usize) -> Result<ExpertLoad, RoutingError> {
    let logits: Vec<OutputPayload> =
        bundle.scenarios.iter().map(|s| s.inputs.first().cloned().ok_or(RoutingError::BadLogits)).collect::<Result<_, _>>()?;
    expert_load(&logits, k, bundle.bundle_id.clone())
}

/// Population Gini coefficient of expert counts (mean-absolute-difference
/// form). Evaluated exactly in integers from the sorted counts.
pub fn gini(load: &ExpertLoad) -> f64 {
    let mut c = load.counts.clone();
    c.sort_unstable();
    let n = c.len() as i128;
    let weighted: i128 = c.iter().enumerate().map(|(i, &x)| (2 * (i as i128 + 1) - n - 1) * x as i128).sum();
    let total: i128 = c.iter().map(|&x| x as i128).sum();
    weighted as f64 / (n * total) as f64
}

/// Experts among the `top` most loaded in both `a` and `b`.
pub fn hot_expert_overlap(a: &ExpertLoad, b: &ExpertLoad, top: usize) -> Result<(usize, f64), RoutingError> {
    if a.num_experts != b.num_experts {
        return Err(RoutingError::ExpertCountMismatch(a.num_experts, b.num_experts));
    }
    if top == 0 || top > a.num_experts {
        return Err(RoutingError::InvalidTop { top, experts: a.num_experts });
    }
    let hot_a = top_indices(&a.counts, top);
    let hot_b = top_indices(&b.counts, top);
    let shared = hot_a.iter().filter(|e| hot_b.contains(e)).count();
    Ok((shared, shared as f64 / top as f64))
}

/// The `top` most loaded experts in descending load order.
pub fn hot_experts(load: &ExpertLoad, top: usize) -> Vec<usize> {
    top_indices(&load.counts, top.min(load.num_experts))
}

pub const TOY_EXPERTS: usize = 128;
pub const TOY_TOP_K: usize = 8;
const TOY_HIDDEN: usize = 32;
const TOY_VOCAB: usize = 512;

/// Input distributions fed to the toy gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToySource {
    /// Independent Gaussian hidden states.
    RandomTensor,
    /// Embeddings of uniformly drawn token ids.
    RandomToken,
    /// Zipf-distributed token ids whose embeddings share a common direction,
    /// standing in for real text.
    Structured,
}

impl ToySource {
    pub const ALL: [ToySource; 3] = [ToySource::RandomTensor, ToySource::RandomToken, ToySource::Structured];

    pub fn as_str(self) -> &'static str {
        match self {
            ToySource::RandomTensor => "random-tensor",
            ToySource::RandomToken => "random-token",
            ToySource::Structured => "structured",
        }
    }
}

/// Fixed random gate and embedding table of the toy router.
pub struct ToyGate {
    weight: Vec<f64>,
    embed: Vec<f64>,
    shared: Vec<f64>,
}

impl ToyGate {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>();
        let scale = 1.0 / (TOY_HIDDEN as f64).sqrt();
        let weight = draw(TOY_HIDDEN * TOY_EXPERTS).into_iter().map(|w| w * scale).collect();
        let embed = draw(TOY_VOCAB * TOY_HIDDEN);
        let shared = draw(TOY_HIDDEN);
        ToyGate { weight, embed, shared }
    }

    fn logits_of(&self, hidden: &[f64], out: &mut Vec<f64>) {
        for e in 0..TOY_EXPERTS {
            let mut acc = 0.0;
            for (h, &x) in hidden.iter().enumerate() {
                acc += x * self.weight[h * TOY_EXPERTS + e];
            }
            out.push(acc);
        }
    }

    /// `[tokens, 128]` gate logits for `tokens` inputs drawn from `source`.
    pub fn logits(&self, source: ToySource, tokens: usize, seed: u64) -> OutputPayload {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let zipf = Zipf::new(TOY_VOCAB as f64, 1.2).expect("valid zipf");
        let mut values = Vec::with_capacity(tokens * TOY_EXPERTS);
        let mut hidden = vec![0.0; TOY_HIDDEN];
        for _ in 0..tokens {
            match source {
                ToySource::RandomTensor => hidden.iter_mut().for_each(|h| *h = normal.sample(&mut rng)),
                ToySource::RandomToken => {
                    let t = rng.random_range(0..TOY_VOCAB);
                    hidden.copy_from_slice(&self.embed[t * TOY_HIDDEN..(t + 1) * TOY_HIDDEN]);
                }
                ToySource::Structured => {
                    let t = zipf.sample(&mut rng) as usize - 1;
                    for (h, slot) in hidden.iter_mut().enumerate() {
                        *slot = 0.5 * self.embed[t * TOY_HIDDEN + h] + 2.0 * self.shared[h];
                    }
                }
            }
            self.logits_of(&hidden, &mut values);
        }
        OutputPayload::tensor(vec![tokens, TOY_EXPERTS], values).expect("consistent shape")
    }

    pub fn load(&self, source: ToySource, tokens: usize, seed: u64) -> ExpertLoad {
        expert_load(&[self.logits(source, tokens, seed)], TOY_TOP_K, source.as_str()).expect("toy gate is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load(counts: &[u64]) -> ExpertLoad {
        ExpertLoad::new(counts.to_vec(), "t").unwrap()
    }

    fn gini_oracle(c: &[u64]) -> f64 {
        let n = c.len() as f64;
        let mean = c.iter().sum::<u64>() as f64 / n;
        let mut s = 0.0;
        for &a in c {
            for &b in c {
                s += (a as f64 - b as f64).abs();
            }
        }
        s / (2.0 * n * n * mean)
    }

    #[test]
    fn load_examples() {
        let l = OutputPayload::tensor(vec![1, 3], vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(expert_load(&[l], 2, "x").unwrap().counts, vec![1, 0, 1]);
        let flat = OutputPayload::tensor(vec![5, 4], vec![0.5; 20]).unwrap();
        assert_eq!(expert_load(std::slice::from_ref(&flat), 2, "x").unwrap().counts, vec![5, 5, 0, 0]);
        assert_eq!(expert_load(&[flat], 5, "x"), Err(RoutingError::KExceedsExperts { k: 5, experts: 4 }));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&load(&[7; 16])), 0.0);
        assert_eq!(gini(&load(&[3, 1])), 0.25);
        let mut one_hot = vec![0u64; 128];
        one_hot[17] = 40;
        assert_eq!(gini(&load(&one_hot)), 127.0 / 128.0);
        assert!((gini_oracle(&one_hot) - 127.0 / 128.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let a: Vec<u64> = (0..64).map(|i| if i < 16 { 100 + i } else { 1 }).collect();
        let b: Vec<u64> = (0..64).map(|i| if (12..28).contains(&i) { 100 } else { 1 }).collect();
        assert_eq!(hot_expert_overlap(&load(&a), &load(&a), 16).unwrap(), (16, 1.0));
        assert_eq!(hot_expert_overlap(&load(&a), &load(&b), 16).unwrap(), (4, 0.25));
        assert_eq!(
            hot_expert_overlap(&load(&a), &load(&a[..32]), 16),
            Err(RoutingError::ExpertCountMismatch(64, 32))
        );
    }

    #[test]
    fn structured_inputs_are_more_skewed() {
        let gate = ToyGate::new(42);
        let random = gini(&gate.load(ToySource::RandomTensor, 4096, 1));
        let structured = gini(&gate.load(ToySource::Structured, 4096, 1));
        assert!(random < structured, "random {random} structured {structured}");
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise_oracle(c in proptest::collection::vec(0u64..50, 1..40), k in 1u64..20) {
            prop_assume!(c.iter().sum::<u64>() > 0);
            let g = gini(&load(&c));
            prop_assert!((g - gini_oracle(&c)).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&g));
            let scaled: Vec<u64> = c.iter().map(|x| x * k).collect();
            prop_assert!((gini(&load(&scaled)) - g).abs() < 1e-12);
        }

        #[test]
        fn moving_load_to_the_max_increases_gini(c in proptest::collection::vec(1u64..50, 2..30)) {
            let (imin, _) = c.iter().enumerate().min_by_key(|(_, &v)| v).unwrap();
            let (imax, _) = c.iter().enumerate().rev().max_by_key(|(_, &v)| v).unwrap();
            prop_assume!(imin != imax);
            let mut moved = c.clone();
            moved[imin] -= 1;
            moved[imax] += 1;
            prop_assert!(gini(&load(&moved)) > gini(&load(&c)));
        }

        #[test]
        fn overlap_is_symmetric(a in proptest::collection::vec(0u64..20, 32), b in proptest::collection::vec(0u64..20, 32), top in 1usize..32) {
            prop_assume!(a.iter().sum::<u64>() > 0 && b.iter().sum::<u64>() > 0);
            prop_assert_eq!(hot_expert_overlap(&load(&a), &load(&b), top).unwrap(), hot_expert_overlap(&load(&b), &load(&a), top).unwrap());
        }
    }
}
