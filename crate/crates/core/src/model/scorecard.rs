use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::RunStatus;

/// One value per leaderboard blend: latency-only (lambda = 0), balanced
/// (lambda = 0.5) and throughput-only (lambda = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByLambda<T> {
    #[serde(rename = "0")]
    pub latency_only: T,
    #[serde(rename = "0.5")]
    pub balanced: T,
    #[serde(rename = "1")]
    pub throughput_only: T,
}

impl<T> ByLambda<T> {
    pub const LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];

    pub fn from_fn(mut f: impl FnMut(f64) -> T) -> Self {
        ByLambda { latency_only: f(0.0), balanced: f(0.5), throughput_only: f(1.0) }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ByLambda<U> {
        ByLambda { latency_only: f(&self.latency_only), balanced: f(&self.balanced), throughput_only: f(&self.throughput_only) }
    }

    /// Value for one of the three supported lambdas.
    pub fn get(&self, lambda: f64) -> Option<&T> {
        if lambda == 0.0 {
            Some(&self.latency_only)
        } else if lambda == 0.5 {
            Some(&self.balanced)
        } else if lambda == 1.0 {
            Some(&self.throughput_only)
        } else {
            None
        }
    }
}

/// Per-item scoring outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub family_id: String,
    pub level: u8,
    pub status: RunStatus,
    /// Mean calibrated correctness over scenarios (`C_i`).
    pub correctness: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_thr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_blend: Option<ByLambda<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBreakdown {
    pub correctness: f64,
    pub coverage: f64,
    /// Family geometric-mean speedup; absent when no item is valid.
    pub speedup: ByLambda<Option<f64>>,
    pub valid_count: usize,
    pub item_count: usize,
}

/// Full evaluation result for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub agent_id: String,
    pub c_macro: f64,
    /// Valid items over the full target set.
    pub coverage_item: f64,
    pub coverage_macro: f64,
    /// Valid items over attempted (non-blocked) items; 0 when nothing was attempted.
    pub coverage_attempted: f64,
    pub s_macro: ByLambda<Option<f64>>,
    pub score_default: f64,
    pub fast_at_1: usize,
    pub fast_at_1_5: usize,
    pub item_count: usize,
    pub attempted_count: usize,
    pub valid_count: usize,
    pub per_family: BTreeMap<String, FamilyBreakdown>,
    pub valid_families: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_by_family: Option<BTreeMap<String, (f64, f64)>>,
    pub items: Vec<ItemScore>,
}

impl ScoreCard {
    /// Balanced-blend speedups of valid items, in item-id order.
    pub fn valid_speedups(&self) -> Vec<f64> {
        self.items.iter().filter_map(|i| i.s_blend.map(|s| s.balanced)).collect()
    }

    pub fn valid_speedups_of(&self, family_id: &str) -> Vec<f64> {
        self.items
            .iter()
            .filter(|i| i.family_id == family_id)
            .filter_map(|i| i.s_blend.map(|s| s.balanced))
            .collect()
    }

    pub fn has_invalid_items(&self) -> bool {
        self.items.iter().any(|i| !i.valid)
    }
}
