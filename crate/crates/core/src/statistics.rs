//! Bootstrap confidence intervals, tolerance sensitivity sweeps and
//! harness-gap accounting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{scale_manifest, CalibrationError};
use crate::model::{ItemScore, Registry, RunRecord, RunStatus, ScoreCard, ThresholdManifest};
use crate::scoring::{geomean, score_items, ScoringError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("speedup {0} is not positive")]
    NonpositiveSpeedup(f64),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
    #[error("unknown policy `{0}` (expected attempted-only, default or punitive)")]
    UnknownPolicy(String),
    #[error("imputed speedup {0} must be positive")]
    InvalidImputed(f64),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    /// Samples smaller than this get the empirical range instead.
    pub small_n_cutoff: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 10_000, seed: 42, level: 0.95, small_n_cutoff: 3 }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        BootstrapConfig { seed, ..Self::default() }
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.replicates == 0 {
            return Err(StatsError::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StatsError::InvalidConfig(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    Range,
    Percentile,
}

impl IntervalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalMethod::Range => "range",
            IntervalMethod::Percentile => "percentile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
    pub n: usize,
    /// Geometric mean of the full sample.
    pub point: f64,
}

/// A labelled interval, as written to record streams and tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
    pub n: usize,
    pub point: f64,
}

impl IntervalRow {
    pub fn new(label: impl Into<String>, ci: ConfidenceInterval) -> Self {
        IntervalRow { label: label.into(), lo: ci.lo, hi: ci.hi, method: ci.method, n: ci.n, point: ci.point }
    }
}

pub fn bootstrap_ci(speedups: &[f64], cfg: &BootstrapConfig) -> Result<ConfidenceInterval, StatsError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    bootstrap_ci_with_workers(speedups, cfg, workers)
}

/// Nearest-rank order statistic: the `ceil(q * len)`-th smallest value.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let len = sorted.len();
    let rank = ((q * len as f64) - 1e-9).ceil().clamp(1.0, len as f64) as usize;
    sorted[rank - 1]
}

/// Percentile bootstrap of the geometric mean.
///
/// All resample indices are drawn up front from one seeded stream in
/// replicate order; workers only evaluate geomeans of fixed index blocks, so
/// the result does not depend on `workers`.
pub fn bootstrap_ci_with_workers(
    speedups: &[f64],
    cfg: &BootstrapConfig,
    workers: usize,
) -> Result<ConfidenceInterval, StatsError> {
    cfg.check()?;
    if speedups.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if let Some(&bad) = speedups.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
        return Err(StatsError::NonpositiveSpeedup(bad));
    }
    let n = speedups.len();
    let point = geomean(speedups).expect("nonempty");
    let min = speedups.iter().copied().fold(f64::INFINITY, f64::min);
    let max = speedups.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n < cfg.small_n_cutoff {
        return Ok(ConfidenceInterval { lo: min, hi: max, method: IntervalMethod::Range, n, point });
    }
    if min == max {
        // Every resample is the sample itself.
        return Ok(ConfidenceInterval { lo: min, hi: max, method: IntervalMethod::Percentile, n, point: min });
    }

    let logs: Vec<f64> = speedups.iter().map(|s| s.ln()).collect();
    let b = cfg.replicates;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let indices: Vec<u32> = (0..b * n).map(|_| rng.random_range(0..n as u32)).collect();

    let mut means = vec![0.0f64; b];
    let workers = workers.clamp(1, b);
    let chunk = b.div_ceil(workers);
    std::thread::scope(|scope| {
        for (block, out) in indices.chunks(chunk * n).zip(means.chunks_mut(chunk)) {
            let logs = &logs;
            scope.spawn(move || {
                for (draw, slot) in block.chunks(n).zip(out.iter_mut()) {
                    let sum: f64 = draw.iter().map(|&i| logs[i as usize]).sum();
                    *slot = (sum / n as f64).exp();
                }
            });
        }
    });
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - cfg.level;
    Ok(ConfidenceInterval {
        lo: nearest_rank(&means, alpha / 2.0),
        hi: nearest_rank(&means, 1.0 - alpha / 2.0),
        method: IntervalMethod::Percentile,
        n,
        point,
    })
}

/// Correct count and geomean speedup of one slice of items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub correct: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geomean: Option<f64>,
}

impl LevelSummary {
    fn of<'a>(items: impl IntoIterator<Item = &'a ItemScore>) -> Self {
        let mut total = 0;
        let mut speedups = Vec::new();
        for it in items {
            total += 1;
            if let Some(b) = it.s_blend {
                speedups.push(b.balanced);
            }
        }
        LevelSummary { correct: speedups.len(), total, geomean: geomean(&speedups) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub per_level: BTreeMap<u8, LevelSummary>,
    pub combined: LevelSummary,
}

/// Rescores `records` under each tolerance scale.
pub fn sensitivity_sweep(
    registry: &Registry,
    records: &[RunRecord],
    manifest: &ThresholdManifest,
    scales: &[f64],
) -> Result<Vec<SweepRow>, StatsError> {
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let scaled = scale_manifest(manifest, scale)?;
        let items = score_items(registry, &scaled, records)?;
        let mut by_level: BTreeMap<u8, Vec<&ItemScore>> = BTreeMap::new();
        for it in &items {
            by_level.entry(it.level).or_default().push(it);
        }
        let per_level = by_level.into_iter().map(|(l, its)| (l, LevelSummary::of(its))).collect();
        rows.push(SweepRow { scale, per_level, combined: LevelSummary::of(&items) });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    /// Blocked targets leave both denominators.
    AttemptedOnly,
    /// Blocked targets count against coverage only.
    Default,
    /// Every non-correct target enters the geomean at the imputed speedup.
    Punitive,
}

impl GapPolicy {
    pub const ALL: [GapPolicy; 3] = [GapPolicy::AttemptedOnly, GapPolicy::Default, GapPolicy::Punitive];

    pub fn as_str(self) -> &'static str {
        match self {
            GapPolicy::AttemptedOnly => "attempted-only",
            GapPolicy::Default => "default",
            GapPolicy::Punitive => "punitive",
        }
    }
}

impl fmt::Display for GapPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapPolicy {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, StatsError> {
        GapPolicy::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| StatsError::UnknownPolicy(s.to_string()))
    }
}

pub const DEFAULT_IMPUTED: f64 = 0.01;

/// What happened on one target, as far as harness-gap accounting cares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetOutcome {
    Blocked,
    /// Attempted but not valid: wrong output, crash, hang and so on.
    Incorrect,
    Correct(f64),
}

/// Per-target outcomes of a scorecard, in item-id order.
pub fn outcomes_from_scorecard(card: &ScoreCard) -> Vec<TargetOutcome> {
    card.items
        .iter()
        .map(|it| match (it.status, it.s_blend) {
            (_, Some(b)) => TargetOutcome::Correct(b.balanced),
            (RunStatus::Blocked, None) => TargetOutcome::Blocked,
            _ => TargetOutcome::Incorrect,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub policy: GapPolicy,
    pub correct: usize,
    pub denominator: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geomean: Option<f64>,
}

impl GapRow {
    /// Coverage as `correct/denominator`.
    pub fn coverage(&self) -> String {
        format!("{}/{}", self.correct, self.denominator)
    }
}

pub fn harness_gap(outcomes: &[TargetOutcome], policy: GapPolicy, imputed: f64) -> Result<GapRow, StatsError> {
    if !(imputed > 0.0 && imputed.is_finite()) {
        return Err(StatsError::InvalidImputed(imputed));
    }
    let mut correct = Vec::new();
    let mut blocked = 0;
    for o in outcomes {
        match *o {
            TargetOutcome::Correct(s) if s > 0.0 && s.is_finite() => correct.push(s),
            TargetOutcome::Correct(s) => return Err(StatsError::NonpositiveSpeedup(s)),
            TargetOutcome::Blocked => blocked += 1,
            TargetOutcome::Incorrect => {}
        }
    }
    let total = outcomes.len();
    let (denominator, geomean) = match policy {
        GapPolicy::AttemptedOnly => (total - blocked, geomean(&correct)),
        GapPolicy::Default => (total, geomean(&correct)),
        GapPolicy::Punitive => {
            let mut all = correct.clone();
            all.resize(total, imputed);
            (total, geomean(&all))
        }
    };
    Ok(GapRow { policy, correct: correct.len(), denominator, geomean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_gives_zero_width() {
        let ci = bootstrap_ci(&[1.3; 10], &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.3, 1.3));
        assert_eq!(ci.method, IntervalMethod::Percentile);
    }

    #[test]
    fn small_samples_use_the_range() {
        let ci = bootstrap_ci(&[1.044, 0.379], &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.lo, ci.hi, ci.method), (0.379, 1.044, IntervalMethod::Range));
        let ci = bootstrap_ci(&[0.7], &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.7, 0.7));
    }

    #[test]
    fn bootstrap_errors() {
        let cfg = BootstrapConfig::default();
        assert_eq!(bootstrap_ci(&[], &cfg), Err(StatsError::EmptyInput));
        assert_eq!(bootstrap_ci(&[1.0, 0.0, 2.0], &cfg), Err(StatsError::NonpositiveSpeedup(0.0)));
        let bad = BootstrapConfig { level: 1.0, ..cfg };
        assert!(matches!(bootstrap_ci(&[1.0, 2.0, 3.0], &bad), Err(StatsError::InvalidConfig(_))));
    }

    #[test]
    fn independent_of_worker_count() {
        let data: Vec<f64> = (1..=17).map(|i| 0.5 + i as f64 / 10.0).collect();
        let cfg = BootstrapConfig { replicates: 2001, ..Default::default() };
        let one = bootstrap_ci_with_workers(&data, &cfg, 1).unwrap();
        for w in [2, 3, 8, 64] {
            let other = bootstrap_ci_with_workers(&data, &cfg, w).unwrap();
            assert_eq!(one.lo.to_bits(), other.lo.to_bits());
            assert_eq!(one.hi.to_bits(), other.hi.to_bits());
        }
        assert!(one.lo <= one.point && one.point <= one.hi);
    }

    #[test]
    fn nearest_rank_positions() {
        let v: Vec<f64> = (1..=10000).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.025), 250.0);
        assert_eq!(nearest_rank(&v, 0.975), 9750.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 1.0), 10000.0);
    }

    fn outcomes(correct: usize, s: f64, blocked: usize, incorrect: usize) -> Vec<TargetOutcome> {
        let mut v = vec![TargetOutcome::Correct(s); correct];
        v.extend(std::iter::repeat_n(TargetOutcome::Blocked, blocked));
        v.extend(std::iter::repeat_n(TargetOutcome::Incorrect, incorrect));
        v
    }

    #[test]
    fn punitive_rows() {
        let row = harness_gap(&outcomes(8, 0.527, 50, 30), GapPolicy::Punitive, DEFAULT_IMPUTED).unwrap();
        let oracle = ((8.0 * 0.527f64.ln() + 80.0 * 0.01f64.ln()) / 88.0).exp();
        assert!((row.geomean.unwrap() - oracle).abs() < 1e-12);
        assert!((row.geomean.unwrap() - 0.014).abs() <= 1e-3);
        let row = harness_gap(&outcomes(28, 0.777, 60, 0), GapPolicy::Punitive, DEFAULT_IMPUTED).unwrap();
        assert!((row.geomean.unwrap() - 0.040).abs() <= 1e-3);
        assert_eq!(row.coverage(), "28/88");
    }

    #[test]
    fn policies_differ_on_blocked_targets() {
        let o = outcomes(2, 2.0, 2, 1);
        let a = harness_gap(&o, GapPolicy::AttemptedOnly, 0.01).unwrap();
        let d = harness_gap(&o, GapPolicy::Default, 0.01).unwrap();
        assert_eq!((a.correct, a.denominator), (2, 3));
        assert_eq!((d.correct, d.denominator), (2, 5));
        assert_eq!(a.geomean, d.geomean);
        assert_eq!("punitive".parse::<GapPolicy>().unwrap(), GapPolicy::Punitive);
        assert_eq!("lenient".parse::<GapPolicy>(), Err(StatsError::UnknownPolicy("lenient".into())));
    }

    #[test]
    fn fully_correct_agent_is_policy_invariant() {
        let o = outcomes(88, 1.1, 0, 0);
        let rows: Vec<_> = GapPolicy::ALL.iter().map(|&p| harness_gap(&o, p, 0.01).unwrap()).collect();
        for r in &rows[1..] {
            assert_eq!((r.correct, r.denominator, r.geomean), (rows[0].correct, rows[0].denominator, rows[0].geomean));
        }
    }

    proptest! {
        #[test]
        fn policy_ordering(
            speedups in proptest::collection::vec(0.05f64..10.0, 1..20),
            blocked in 0usize..10,
            incorrect in 0usize..10,
        ) {
            let mut o: Vec<_> = speedups.iter().map(|&s| TargetOutcome::Correct(s)).collect();
            o.extend(std::iter::repeat_n(TargetOutcome::Blocked, blocked));
            o.extend(std::iter::repeat_n(TargetOutcome::Incorrect, incorrect));
            let a = harness_gap(&o, GapPolicy::AttemptedOnly, 0.01).unwrap();
            let d = harness_gap(&o, GapPolicy::Default, 0.01).unwrap();
            let p = harness_gap(&o, GapPolicy::Punitive, 0.01).unwrap();
            prop_assert!(p.geomean.unwrap() <= d.geomean.unwrap() * (1.0 + 1e-12));
            let cov = |r: &GapRow| r.correct as f64 / r.denominator as f64;
            prop_assert!(cov(&a) >= cov(&d));
        }

        #[test]
        fn bootstrap_is_deterministic(data in proptest::collection::vec(0.1f64..10.0, 3..12), seed in 0u64..1000) {
            let cfg = BootstrapConfig { replicates: 300, seed, ..Default::default() };
            let a = bootstrap_ci_with_workers(&data, &cfg, 1).unwrap();
            let b = bootstrap_ci_with_workers(&data, &cfg, 4).unwrap();
            prop_assert_eq!(a.lo.to_bits(), b.lo.to_bits());
            prop_assert_eq!(a.hi.to_bits(), b.hi.to_bits());
        }
    }
}
