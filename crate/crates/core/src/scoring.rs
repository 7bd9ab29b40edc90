//! Calibrated correctness, validity, coverage, blended speedups and the
//! macro aggregation that turns one agent's run records into a
//! [`ScoreCard`].
//!
//! Every aggregate is accumulated in item-id order (families in family-id
//! order), so scorecards are bit-identical regardless of input order.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{
    ByLambda, FamilyBreakdown, ItemScore, ItemThreshold, ModelError, Registry, RunRecord, RunStatus, ScoreCard,
    ThresholdManifest,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("band violation: g={g} must be below f={f}")]
    BandViolation { g: f64, f: f64 },
    #[error("item `{item}` scenario `{scenario}` has no discrepancy")]
    MissingDiscrepancy { item: String, scenario: String },
    #[error("manifest has no thresholds for item `{0}`")]
    MissingThreshold(String),
    #[error("family `{0}` has no items")]
    EmptyFamily(String),
    #[error("records mix agents `{expected}` and `{found}`")]
    MixedAgentRecords { expected: String, found: String },
    #[error("record references unknown item `{0}`")]
    UnknownItem(String),
    #[error("more than one record for item `{0}`")]
    DuplicateRecord(String),
    #[error("invalid measurement {0}")]
    InvalidMeasurement(f64),
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Piecewise-linear map from discrepancy to `[0, 1]`: 1 up to `g`, 0 from
/// `f`, linear in between. NaN maps to 0.
pub fn calibrated_correctness(d: f64, g: f64, f: f64) -> Result<f64, ScoringError> {
    if g.is_nan() || f.is_nan() || g >= f {
        return Err(ScoringError::BandViolation { g, f });
    }
    Ok(if d.is_nan() || d >= f {
        0.0
    } else if d <= g {
        1.0
    } else {
        (f - d) / (f - g)
    })
}

/// Mean calibrated correctness over the record's scenarios; 0 for any
/// non-ok status.
pub fn item_correctness(record: &RunRecord, threshold: &ItemThreshold) -> Result<f64, ScoringError> {
    if !record.status.is_ok() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in &record.scenarios {
        let d = s.discrepancy.ok_or_else(|| ScoringError::MissingDiscrepancy {
            item: record.item_id.clone(),
            scenario: s.scenario_id.clone(),
        })?;
        total += calibrated_correctness(d, threshold.g, threshold.f)?;
    }
    Ok(total / record.scenarios.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-family mean correctness and its equal-weight mean across families.
pub fn family_and_macro_correctness(
    by_family: &BTreeMap<String, Vec<f64>>,
) -> Result<(BTreeMap<String, f64>, f64), ScoringError> {
    let mut per_family = BTreeMap::new();
    for (family, items) in by_family {
        if items.is_empty() {
            return Err(ScoringError::EmptyFamily(family.clone()));
        }
        per_family.insert(family.clone(), mean(items));
    }
    let c_macro = if per_family.is_empty() { 0.0 } else { mean(&per_family.values().copied().collect::<Vec<_>>()) };
    Ok((per_family, c_macro))
}

/// Inputs to the validity decision for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityInput {
    pub correctness: f64,
    pub tau: f64,
    pub status: RunStatus,
}

impl ValidityInput {
    pub fn is_valid(&self) -> bool {
        self.status.is_ok() && self.correctness >= self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub coverage: f64,
    pub coverage_macro: f64,
    pub per_family: BTreeMap<String, f64>,
    pub valid: BTreeMap<String, Vec<bool>>,
}

/// Item-level and macro-family coverage.
pub fn validity_and_coverage(
    by_family: &BTreeMap<String, Vec<ValidityInput>>,
) -> Result<CoverageSummary, ScoringError> {
    let mut valid = BTreeMap::new();
    let mut per_family = BTreeMap::new();
    let (mut n_valid, mut n_total) = (0usize, 0usize);
    for (family, items) in by_family {
        if items.is_empty() {
            return Err(ScoringError::EmptyFamily(family.clone()));
        }
        let flags: Vec<bool> = items.iter().map(ValidityInput::is_valid).collect();
        let count = flags.iter().filter(|&&v| v).count();
        n_valid += count;
        n_total += flags.len();
        per_family.insert(family.clone(), count as f64 / flags.len() as f64);
        valid.insert(family.clone(), flags);
    }
    let coverage = if n_total == 0 { 0.0 } else { n_valid as f64 / n_total as f64 };
    let coverage_macro = if per_family.is_empty() { 0.0 } else { mean(&per_family.values().copied().collect::<Vec<_>>()) };
    Ok(CoverageSummary { coverage, coverage_macro, per_family, valid })
}

/// Throughput and latency speedups of an ok record, from scenario-mean
/// measurements.
pub fn axis_speedups(record: &RunRecord) -> Result<(f64, f64), ScoringError> {
    let n = record.scenarios.len();
    if !record.status.is_ok() || n == 0 {
        return Err(ScoringError::Model(ModelError::InvalidRecord {
            item: record.item_id.clone(),
            reason: "speedups need an ok record".into(),
        }));
    }
    let m = |f: fn(&crate::model::ScenarioResult) -> f64| record.scenarios.iter().map(f).sum::<f64>() / n as f64;
    let (ref_thr, cand_thr) = (m(|s| s.ref_throughput), m(|s| s.cand_throughput));
    let (ref_lat, cand_lat) = (m(|s| s.ref_latency_s), m(|s| s.cand_latency_s));
    for v in [ref_thr, cand_thr, ref_lat, cand_lat] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ScoringError::InvalidMeasurement(v));
        }
    }
    Ok((cand_thr / ref_thr, ref_lat / cand_lat))
}

/// `s_thr^lambda * s_lat^(1 - lambda)`; the endpoints return the raw axes.
pub fn blended_speedup(s_thr: f64, s_lat: f64, lambda: f64) -> Result<f64, ScoringError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ScoringError::InvalidLambda(lambda));
    }
    for v in [s_thr, s_lat] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ScoringError::InvalidMeasurement(v));
        }
    }
    Ok(if lambda == 1.0 {
        s_thr
    } else if lambda == 0.0 {
        s_lat
    } else {
        (lambda * s_thr.ln() + (1.0 - lambda) * s_lat.ln()).exp()
    })
}

/// `exp(mean(ln s))`, accumulated in slice order. `None` for empty input.
pub fn geomean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let sum: f64 = values.iter().map(|v| v.ln()).sum();
    Some((sum / values.len() as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroSpeedup {
    pub per_family: BTreeMap<String, f64>,
    pub s_macro: Option<f64>,
    pub valid_families: BTreeSet<String>,
}

/// Family geomeans over valid items and their geomean over families that
/// have at least one valid item.
pub fn macro_speedup(valid_by_family: &BTreeMap<String, Vec<f64>>) -> MacroSpeedup {
    let per_family: BTreeMap<String, f64> =
        valid_by_family.iter().filter_map(|(f, s)| geomean(s).map(|g| (f.clone(), g))).collect();
    let valid_families = per_family.keys().cloned().collect();
    let s_macro = geomean(&per_family.values().copied().collect::<Vec<_>>());
    MacroSpeedup { per_family, s_macro, valid_families }
}

/// `S_macro * C_macro * Coverage_macro`, or 0 without any valid family.
pub fn default_score(s_macro: Option<f64>, c_macro: f64, coverage_macro: f64) -> f64 {
    s_macro.map_or(0.0, |s| s * c_macro * coverage_macro)
}

/// Number of speedups strictly above `threshold`.
pub fn fast_at(speedups: &[f64], threshold: f64) -> usize {
    speedups.iter().filter(|&&s| s > threshold).count()
}

/// Scores every registry item for one agent. Items without a record are
/// treated as blocked.
pub fn score_items(
    registry: &Registry,
    manifest: &ThresholdManifest,
    records: &[RunRecord],
) -> Result<Vec<ItemScore>, ScoringError> {
    let mut by_item: BTreeMap<&str, &RunRecord> = BTreeMap::new();
    for r in records {
        let item = registry.item(&r.item_id).ok_or_else(|| ScoringError::UnknownItem(r.item_id.clone()))?;
        r.check_covers(item)?;
        if by_item.insert(r.item_id.as_str(), r).is_some() {
            return Err(ScoringError::DuplicateRecord(r.item_id.clone()));
        }
    }
    let mut out = Vec::with_capacity(registry.item_count());
    for item in registry.items() {
        let threshold =
            manifest.threshold(&item.item_id).ok_or_else(|| ScoringError::MissingThreshold(item.item_id.clone()))?;
        let (status, correctness, speedups) = match by_item.get(item.item_id.as_str()) {
            Some(rec) => {
                let c = item_correctness(rec, &threshold)?;
                let s = if rec.status.is_ok() { Some(axis_speedups(rec)?) } else { None };
                (rec.status, c, s)
            }
            None => (RunStatus::Blocked, 0.0, None),
        };
        let valid = ValidityInput { correctness, tau: threshold.tau, status }.is_valid();
        let (s_thr, s_lat, s_blend) = match (valid, speedups) {
            (true, Some((thr, lat))) => {
                let mut err = None;
                let blend = ByLambda::from_fn(|l| {
                    blended_speedup(thr, lat, l).unwrap_or_else(|e| {
                        err = Some(e);
                        f64::NAN
                    })
                });
                if let Some(e) = err {
                    return Err(e);
                }
                (Some(thr), Some(lat), Some(blend))
            }
            _ => (None, None, None),
        };
        out.push(ItemScore {
            item_id: item.item_id.clone(),
            family_id: item.family_id.clone(),
            level: item.level,
            status,
            correctness,
            valid,
            s_thr,
            s_lat,
            s_blend,
        });
    }
    Ok(out)
}

/// Assembles the full scorecard for one agent.
pub fn build_scorecard(
    agent_id: &str,
    registry: &Registry,
    manifest: &ThresholdManifest,
    records: &[RunRecord],
) -> Result<ScoreCard, ScoringError> {
    if let Some(r) = records.iter().find(|r| r.agent_id != agent_id) {
        return Err(ScoringError::MixedAgentRecords { expected: agent_id.to_string(), found: r.agent_id.clone() });
    }
    let items = score_items(registry, manifest, records)?;
    scorecard_from_items(agent_id, registry, manifest, items)
}

/// Aggregates already-scored items into a scorecard.
pub fn scorecard_from_items(
    agent_id: &str,
    registry: &Registry,
    manifest: &ThresholdManifest,
    items: Vec<ItemScore>,
) -> Result<ScoreCard, ScoringError> {
    let mut correctness: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut validity: BTreeMap<String, Vec<ValidityInput>> = BTreeMap::new();
    let mut blends: BTreeMap<String, Vec<ByLambda<f64>>> = BTreeMap::new();
    for fam in registry.families() {
        correctness.insert(fam.family_id.clone(), Vec::new());
        validity.insert(fam.family_id.clone(), Vec::new());
        blends.insert(fam.family_id.clone(), Vec::new());
    }
    for it in &items {
        let tau = manifest.threshold(&it.item_id).map(|t| t.tau).unwrap_or(manifest.tau_default());
        correctness.entry(it.family_id.clone()).or_default().push(it.correctness);
        validity.entry(it.family_id.clone()).or_default().push(ValidityInput {
            correctness: it.correctness,
            tau,
            status: it.status,
        });
        if let Some(b) = it.s_blend {
            blends.entry(it.family_id.clone()).or_default().push(b);
        }
    }

    let (c_family, c_macro) = family_and_macro_correctness(&correctness)?;
    let coverage = validity_and_coverage(&validity)?;
    let speedups = ByLambda::from_fn(|lambda| {
        let per_family: BTreeMap<String, Vec<f64>> = blends
            .iter()
            .map(|(f, bs)| (f.clone(), bs.iter().map(|b| *b.get(lambda).expect("supported lambda")).collect()))
            .collect();
        macro_speedup(&per_family)
    });

    let per_family = c_family
        .iter()
        .map(|(family, &c)| {
            let flags = &coverage.valid[family];
            let breakdown = FamilyBreakdown {
                correctness: c,
                coverage: coverage.per_family[family],
                speedup: speedups.map(|m| m.per_family.get(family).copied()),
                valid_count: flags.iter().filter(|&&v| v).count(),
                item_count: flags.len(),
            };
            (family.clone(), breakdown)
        })
        .collect();

    let balanced: Vec<f64> = items.iter().filter_map(|i| i.s_blend.map(|b| b.balanced)).collect();
    let attempted_count = items.iter().filter(|i| i.status.is_attempted()).count();
    let valid_count = items.iter().filter(|i| i.valid).count();
    let s_macro = speedups.map(|m| m.s_macro);
    Ok(ScoreCard {
        agent_id: agent_id.to_string(),
        c_macro,
        coverage_item: coverage.coverage,
        coverage_macro: coverage.coverage_macro,
        coverage_attempted: if attempted_count == 0 { 0.0 } else { valid_count as f64 / attempted_count as f64 },
        score_default: default_score(s_macro.balanced, c_macro, coverage.coverage_macro),
        s_macro,
        fast_at_1: fast_at(&balanced, 1.0),
        fast_at_1_5: fast_at(&balanced, 1.5),
        item_count: items.len(),
        attempted_count,
        valid_count,
        per_family,
        valid_families: speedups.balanced.valid_families.clone(),
        ci_by_family: None,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        validate_registry, BenchmarkItem, DiscrepancyKind, Dtype, DtypeTolerance, FamilySpec, OutputPayload,
        ScenarioResult,
    };
    use proptest::prelude::*;

    #[test]
    fn correctness_boundaries() {
        assert_eq!(calibrated_correctness(1.0, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(calibrated_correctness(3.0, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(calibrated_correctness(2.0, 1.0, 3.0).unwrap(), 0.5);
        assert_eq!(calibrated_correctness(f64::INFINITY, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(calibrated_correctness(0.5, 2.0, 2.0), Err(ScoringError::BandViolation { g: 2.0, f: 2.0 }));
    }

    fn family_map(entries: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        entries.iter().map(|(f, v)| (f.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn macro_correctness() {
        let (_, c) = family_and_macro_correctness(&family_map(&[("a", &[1.0]), ("b", &[0.5])])).unwrap();
        assert_eq!(c, 0.75);
        let (_, c) = family_and_macro_correctness(&family_map(&[("a", &[1.0; 10]), ("b", &[0.0])])).unwrap();
        assert_eq!(c, 0.5);
        let (per, c) = family_and_macro_correctness(&family_map(&[("a", &[0.2, 0.4])])).unwrap();
        assert_eq!(c, per["a"]);
        assert_eq!(
            family_and_macro_correctness(&family_map(&[("a", &[])])),
            Err(ScoringError::EmptyFamily("a".into()))
        );
    }

    fn vi(valid: bool) -> ValidityInput {
        ValidityInput { correctness: if valid { 1.0 } else { 0.0 }, tau: 1.0, status: RunStatus::Ok }
    }

    #[test]
    fn coverage() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![vi(true), vi(true)]);
        m.insert("b".to_string(), vec![vi(true)]);
        let c = validity_and_coverage(&m).unwrap();
        assert_eq!((c.coverage, c.coverage_macro), (1.0, 1.0));

        m.insert("b".to_string(), vec![vi(false), vi(false)]);
        let c = validity_and_coverage(&m).unwrap();
        assert_eq!((c.coverage, c.coverage_macro), (0.5, 0.5));

        m.insert("a".to_string(), vec![vi(true); 4]);
        m.insert("b".to_string(), vec![vi(false)]);
        let c = validity_and_coverage(&m).unwrap();
        assert_eq!(c.coverage, 4.0 / 5.0);
        assert_eq!(c.coverage_macro, 0.5);
    }

    #[test]
    fn crashed_items_are_never_valid() {
        let crash = ValidityInput { correctness: 0.0, tau: 0.0, status: RunStatus::Crash };
        assert!(!crash.is_valid());
    }

    #[test]
    fn blends() {
        assert!((blended_speedup(2.0, 0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(blended_speedup(1.7, 0.3, 1.0).unwrap(), 1.7);
        assert_eq!(blended_speedup(1.7, 0.3, 0.0).unwrap(), 0.3);
        assert_eq!(blended_speedup(1.0, 1.0, 1.5), Err(ScoringError::InvalidLambda(1.5)));
        assert_eq!(blended_speedup(0.0, 1.0, 0.5), Err(ScoringError::InvalidMeasurement(0.0)));
    }

    #[test]
    fn macro_speedups() {
        let m = macro_speedup(&family_map(&[("a", &[4.0, 1.0])]));
        assert!((m.per_family["a"] - 2.0).abs() < 1e-12);
        let m = macro_speedup(&family_map(&[("a", &[2.0]), ("b", &[0.5]), ("c", &[])]));
        assert!((m.s_macro.unwrap() - 1.0).abs() < 1e-12);
        assert!(!m.valid_families.contains("c"));
        assert_eq!(macro_speedup(&family_map(&[("a", &[])])).s_macro, None);
    }

    #[test]
    fn pooled_family_geomean() {
        let mut s = vec![1.035; 48];
        s.extend(std::iter::repeat_n(0.844, 40));
        let m = macro_speedup(&family_map(&[("all", &s)]));
        let oracle = ((48.0 * 1.035f64.ln() + 40.0 * 0.844f64.ln()) / 88.0).exp();
        assert!((m.per_family["all"] - oracle).abs() < 1e-12);
        assert!((m.per_family["all"] - 0.943).abs() <= 1e-3);
    }

    #[test]
    fn scores_and_fast_at() {
        assert_eq!(default_score(Some(1.0), 1.0, 1.0), 1.0);
        assert_eq!(default_score(Some(2.0), 0.5, 1.0), 1.0);
        assert_eq!(default_score(None, 1.0, 1.0), 0.0);
        assert_eq!(fast_at(&[1.2, 0.9, 1.6], 1.0), 2);
        assert_eq!(fast_at(&[1.2, 0.9, 1.6], 1.5), 1);
        assert_eq!(fast_at(&[], 1.0), 0);
        assert_eq!(fast_at(&[1.0], 1.0), 0);
    }

    fn scenario(id: &str, d: f64, speed: f64) -> ScenarioResult {
        let out = OutputPayload::vector(vec![0.0]).unwrap();
        ScenarioResult {
            scenario_id: id.into(),
            ref_output: out.clone(),
            cand_output: out,
            ref_runtime_s: 1.0,
            cand_runtime_s: 1.0 / speed,
            ref_throughput: 10.0,
            cand_throughput: 10.0 * speed,
            ref_latency_s: 1.0,
            cand_latency_s: 1.0 / speed,
            discrepancy: Some(d),
            ref_run_times_s: vec![],
            cand_run_times_s: vec![],
        }
    }

    fn two_family_fixture() -> (Registry, ThresholdManifest) {
        let fams = vec![
            FamilySpec::new("dense", DiscrepancyKind::ElementwiseNumeric, 3.0, 1.0).unwrap(),
            FamilySpec::new("moe", DiscrepancyKind::ElementwiseNumeric, 3.0, 1.0).unwrap(),
        ];
        let sc = || vec!["s0".to_string(), "s1".to_string()];
        let items = vec![
            BenchmarkItem::new("a1", "dense", 1, Dtype::Fp32, sc(), "r").unwrap(),
            BenchmarkItem::new("a2", "dense", 1, Dtype::Fp32, sc(), "r").unwrap(),
            BenchmarkItem::new("b1", "moe", 2, Dtype::Fp32, sc(), "r").unwrap(),
        ];
        let reg = validate_registry(fams, items).unwrap();
        let mut m = ThresholdManifest::new(DtypeTolerance::default_table());
        for id in ["a1", "a2", "b1"] {
            m.insert(id, ItemThreshold { g: 1.0, f: 3.0, tau: 1.0 }).unwrap();
        }
        m.freeze();
        (reg, m)
    }

    #[test]
    fn hand_computed_card() {
        let (reg, m) = two_family_fixture();
        let recs = vec![
            RunRecord::ok("agent", "a1", vec![scenario("s0", 0.5, 2.0), scenario("s1", 0.2, 2.0)]).unwrap(),
            // C = (1 + 0.5) / 2 = 0.75 < tau -> invalid
            RunRecord::ok("agent", "a2", vec![scenario("s0", 0.0, 1.0), scenario("s1", 2.0, 1.0)]).unwrap(),
            RunRecord::ok("agent", "b1", vec![scenario("s0", 1.0, 0.5), scenario("s1", 0.0, 0.5)]).unwrap(),
        ];
        let card = build_scorecard("agent", &reg, &m, &recs).unwrap();
        // C_dense = (1 + 0.75)/2 = 0.875, C_moe = 1 -> C_macro = 0.9375
        assert_eq!(card.c_macro, 0.9375);
        assert_eq!(card.coverage_item, 2.0 / 3.0);
        assert_eq!(card.coverage_macro, 0.75);
        let s = card.s_macro.balanced.unwrap();
        assert!((s - 1.0).abs() < 1e-12, "sqrt(2 * 0.5) = 1, got {s}");
        assert!((card.score_default - 0.9375 * 0.75).abs() < 1e-12);
        assert_eq!(card.fast_at_1, 1);
        assert_eq!(card.fast_at_1_5, 1);
        assert_eq!(card.per_family["dense"].valid_count, 1);
        assert!((card.per_family["dense"].speedup.balanced.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_records_means_everything_blocked() {
        let (reg, m) = two_family_fixture();
        let card = build_scorecard("agent", &reg, &m, &[]).unwrap();
        assert_eq!(card.score_default, 0.0);
        assert_eq!(card.coverage_item, 0.0);
        assert_eq!(card.attempted_count, 0);
        assert!(card.items.iter().all(|i| i.status == RunStatus::Blocked && !i.valid));
    }

    #[test]
    fn record_errors() {
        let (reg, m) = two_family_fixture();
        let mixed = vec![
            RunRecord::failed("x", "a1", RunStatus::Crash).unwrap(),
            RunRecord::failed("y", "a2", RunStatus::Crash).unwrap(),
        ];
        assert!(matches!(build_scorecard("x", &reg, &m, &mixed), Err(ScoringError::MixedAgentRecords { .. })));
        let dup = vec![
            RunRecord::failed("x", "a1", RunStatus::Crash).unwrap(),
            RunRecord::failed("x", "a1", RunStatus::Hang).unwrap(),
        ];
        assert_eq!(build_scorecard("x", &reg, &m, &dup), Err(ScoringError::DuplicateRecord("a1".into())));
        let mut missing = scenario("s0", 0.0, 1.0);
        missing.discrepancy = None;
        let rec = RunRecord::ok("x", "a1", vec![missing, scenario("s1", 0.0, 1.0)]).unwrap();
        assert!(matches!(build_scorecard("x", &reg, &m, &[rec]), Err(ScoringError::MissingDiscrepancy { .. })));
    }

    #[test]
    fn crash_gets_zero_correctness() {
        let rec = RunRecord::failed("x", "a1", RunStatus::Crash).unwrap();
        assert_eq!(item_correctness(&rec, &ItemThreshold { g: 1.0, f: 3.0, tau: 1.0 }).unwrap(), 0.0);
        let rec = RunRecord::ok("x", "a1", vec![scenario("s0", 0.0, 1.0), scenario("s1", 5.0, 1.0)]).unwrap();
        assert_eq!(item_correctness(&rec, &ItemThreshold { g: 1.0, f: 3.0, tau: 1.0 }).unwrap(), 0.5);
    }

    proptest! {
        #[test]
        fn correctness_piecewise_linear(g in 0.0f64..10.0, w in 0.01f64..10.0, t in 0.0f64..1.0) {
            let f = g + w;
            let d = g + t * w;
            let c = calibrated_correctness(d, g, f).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            let h = 1e-6 * w;
            if d - h > g && d + h < f {
                let slope = (calibrated_correctness(d + h, g, f).unwrap() - calibrated_correctness(d - h, g, f).unwrap()) / (2.0 * h);
                prop_assert!((slope + 1.0 / w).abs() <= 1e-6 / w);
            }
        }

        #[test]
        fn blend_unit_law(s in 0.01f64..100.0) {
            let b = blended_speedup(s, 1.0 / s, 0.5).unwrap();
            prop_assert!((b - 1.0).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn geomean_recomposes_over_partitions(
            values in proptest::collection::vec(0.05f64..20.0, 2..40),
            cut in 1usize..39,
        ) {
            let cut = cut.min(values.len() - 1);
            let (a, b) = values.split_at(cut);
            let whole = geomean(&values).unwrap();
            let pooled = ((a.len() as f64 * geomean(a).unwrap().ln() + b.len() as f64 * geomean(b).unwrap().ln())
                / values.len() as f64).exp();
            prop_assert!((whole - pooled).abs() <= 1e-9 * whole);
        }
    }
}
