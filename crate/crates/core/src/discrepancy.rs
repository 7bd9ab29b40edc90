//! Family-specific discrepancy functions between candidate and reference
//! outputs.
//!
//! Numeric outputs are measured in ratio space: each element's deviation is
//! divided by its dtype band `atol + rtol * |ref|`, so a discrepancy of 1.0
//! sits exactly on the edge of the band regardless of dtype.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DiscrepancyKind, DtypeTolerance, FamilySpec, OutputPayload, PayloadKind, ScenarioResult};

/// Discrepancy assigned to a candidate that emitted NaN. Larger than any
/// finite fail threshold.
pub const MAX_DISCREPANCY: f64 = f64::INFINITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscrepancyError {
    #[error("shape mismatch: candidate {cand:?} vs reference {reference:?}")]
    ShapeMismatch { cand: Vec<usize>, reference: Vec<usize> },
    #[error("reference contains a non-finite value at index {0}")]
    NonFiniteReference(usize),
    #[error("non-finite scalar input")]
    NonFiniteInput,
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("k={k} exceeds ranking length {len}")]
    KExceedsLength { k: usize, len: usize },
    #[error("family expects {expected:?} but payloads are {cand} / {reference}")]
    KindMismatch { expected: DiscrepancyKind, cand: &'static str, reference: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    /// Set when the report was produced for a specific scenario.
    pub scenario_id: Option<String>,
    pub d: f64,
    /// Flat index of the worst element (numeric kind only).
    pub worst_index: Option<usize>,
    pub kind: DiscrepancyKind,
}

impl DiscrepancyReport {
    fn new(d: f64, worst_index: Option<usize>, kind: DiscrepancyKind) -> Self {
        DiscrepancyReport { scenario_id: None, d, worst_index, kind }
    }
}

fn expect_kinds(
    expected: DiscrepancyKind,
    payload_kind: PayloadKind,
    cand: &OutputPayload,
    reference: &OutputPayload,
) -> Result<(), DiscrepancyError> {
    if cand.kind() != payload_kind || reference.kind() != payload_kind {
        return Err(DiscrepancyError::KindMismatch {
            expected,
            cand: cand.kind().as_str(),
            reference: reference.kind().as_str(),
        });
    }
    Ok(())
}

/// Max over elements of `|cand - ref| / (atol + rtol * |ref|)`.
///
/// A NaN in the candidate yields [`MAX_DISCREPANCY`] with `worst_index` at
/// the first NaN. Ties resolve to the lowest index.
pub fn elementwise_error_ratio(
    cand: &OutputPayload,
    reference: &OutputPayload,
    tol: &DtypeTolerance,
) -> Result<DiscrepancyReport, DiscrepancyError> {
    let kind = DiscrepancyKind::ElementwiseNumeric;
    expect_kinds(kind, PayloadKind::NumericTensor, cand, reference)?;
    if cand.shape() != reference.shape() {
        return Err(DiscrepancyError::ShapeMismatch { cand: cand.shape().to_vec(), reference: reference.shape().to_vec() });
    }
    if let Some(i) = reference.values().iter().position(|v| !v.is_finite()) {
        return Err(DiscrepancyError::NonFiniteReference(i));
    }
    if let Some(i) = cand.values().iter().position(|v| v.is_nan()) {
        return Ok(DiscrepancyReport::new(MAX_DISCREPANCY, Some(i), kind));
    }
    let mut worst = 0.0f64;
    let mut worst_index = None;
    for (i, (&c, &r)) in cand.values().iter().zip(reference.values()).enumerate() {
        let diff = (c - r).abs();
        let ratio = if diff == 0.0 {
            0.0
        } else {
            let band = tol.band(r);
            if band > 0.0 {
                diff / band
            } else {
                f64::INFINITY
            }
        };
        if worst_index.is_none() || ratio > worst {
            worst = ratio;
            worst_index = Some(i);
        }
    }
    Ok(DiscrepancyReport::new(worst, worst_index, kind))
}

/// Fraction of mismatched positions, counting length overhang as
/// mismatches, normalized by the reference length and capped at 1.
pub fn token_mismatch_rate(cand: &OutputPayload, reference: &OutputPayload) -> Result<DiscrepancyReport, DiscrepancyError> {
    let kind = DiscrepancyKind::TokenSequence;
    expect_kinds(kind, PayloadKind::TokenIds, cand, reference)?;
    let (c, r) = (cand.values(), reference.values());
    if r.is_empty() {
        return Err(DiscrepancyError::EmptyReference);
    }
    let longest = c.len().max(r.len());
    let mismatches = (0..longest).filter(|&i| c.get(i) != r.get(i)).count();
    let d = (mismatches as f64 / r.len() as f64).min(1.0);
    Ok(DiscrepancyReport::new(d, None, kind))
}

/// `1 - |topk(cand) ∩ topk(ref)| / k` where top-k is the first `k` ranked ids.
pub fn topk_rank_disagreement(
    cand: &OutputPayload,
    reference: &OutputPayload,
    k: usize,
) -> Result<DiscrepancyReport, DiscrepancyError> {
    let kind = DiscrepancyKind::RankingTopk;
    expect_kinds(kind, PayloadKind::RankedIds, cand, reference)?;
    let shortest = cand.len().min(reference.len());
    if k == 0 || k > shortest {
        return Err(DiscrepancyError::KExceedsLength { k, len: shortest });
    }
    let top = |p: &OutputPayload| -> BTreeSet<u64> { p.values()[..k].iter().map(|&v| v as u64).collect() };
    let shared = top(cand).intersection(&top(reference)).count();
    let d = 1.0 - shared as f64 / k as f64;
    Ok(DiscrepancyReport::new(d, None, kind))
}

/// Absolute difference of two precomputed scalar quality metrics.
pub fn scalar_abs_delta(cand: &OutputPayload, reference: &OutputPayload) -> Result<DiscrepancyReport, DiscrepancyError> {
    let kind = DiscrepancyKind::ScalarMetric;
    expect_kinds(kind, PayloadKind::Scalar, cand, reference)?;
    let (c, r) = (cand.values()[0], reference.values()[0]);
    if !(c.is_finite() && r.is_finite()) {
        return Err(DiscrepancyError::NonFiniteInput);
    }
    Ok(DiscrepancyReport::new((c - r).abs(), None, kind))
}

/// Routes to the family's discrepancy function and caches `d` on the scenario.
pub fn dispatch_discrepancy(
    family: &FamilySpec,
    scenario: &mut ScenarioResult,
    tol: &DtypeTolerance,
) -> Result<DiscrepancyReport, DiscrepancyError> {
    let (cand, reference) = (&scenario.cand_output, &scenario.ref_output);
    let mut report = match family.discrepancy_kind {
        DiscrepancyKind::ElementwiseNumeric => elementwise_error_ratio(cand, reference, tol)?,
        DiscrepancyKind::TokenSequence => token_mismatch_rate(cand, reference)?,
        DiscrepancyKind::RankingTopk => topk_rank_disagreement(cand, reference, family.rank_k())?,
        DiscrepancyKind::ScalarMetric => scalar_abs_delta(cand, reference)?,
    };
    scenario.discrepancy = Some(report.d);
    report.scenario_id = Some(scenario.scenario_id.clone());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dtype;
    use proptest::prelude::*;

    fn fp32() -> DtypeTolerance {
        DtypeTolerance::default_for(Dtype::Fp32)
    }

    fn vec_payload(v: &[f64]) -> OutputPayload {
        OutputPayload::vector(v.to_vec()).unwrap()
    }

    fn ids(kind: PayloadKind, v: &[u64]) -> OutputPayload {
        OutputPayload::new(kind, vec![v.len()], v.iter().map(|&x| x as f64).collect()).unwrap()
    }

    #[test]
    fn ratio_identity_is_zero() {
        let p = vec_payload(&[1.0, -2.5, 0.0, 1e6]);
        let r = elementwise_error_ratio(&p, &p, &fp32()).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn ratio_inside_band() {
        // 0.001005 / (1e-5 + 1e-3 * 1.0)
        let r = elementwise_error_ratio(&vec_payload(&[1.001005]), &vec_payload(&[1.0]), &fp32()).unwrap();
        let expected = (1.001005f64 - 1.0) / (1e-5 + 1e-3);
        assert_eq!(r.d, expected);
        assert!((r.d - 0.995049504950).abs() < 1e-9);
        assert!(r.d <= 1.0);
    }

    #[test]
    fn ratio_outside_band_at_zero_reference() {
        let r = elementwise_error_ratio(&vec_payload(&[2e-5]), &vec_payload(&[0.0]), &fp32()).unwrap();
        assert!((r.d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_worst_index_ties_break_low() {
        let r = elementwise_error_ratio(&vec_payload(&[1e-5, 1e-5, 0.0]), &vec_payload(&[0.0, 0.0, 0.0]), &fp32()).unwrap();
        assert_eq!(r.worst_index, Some(0));
        let r = elementwise_error_ratio(&vec_payload(&[0.0, 3e-5, 3e-5]), &vec_payload(&[0.0, 0.0, 0.0]), &fp32()).unwrap();
        assert_eq!(r.worst_index, Some(1));
    }

    #[test]
    fn ratio_errors_and_nan() {
        let a = OutputPayload::tensor(vec![2, 2], vec![0.0; 4]).unwrap();
        let b = OutputPayload::tensor(vec![4], vec![0.0; 4]).unwrap();
        assert!(matches!(elementwise_error_ratio(&a, &b, &fp32()), Err(DiscrepancyError::ShapeMismatch { .. })));
        let bad_ref = vec_payload(&[0.0, f64::NAN]);
        assert_eq!(
            elementwise_error_ratio(&vec_payload(&[0.0, 0.0]), &bad_ref, &fp32()),
            Err(DiscrepancyError::NonFiniteReference(1))
        );
        let r = elementwise_error_ratio(&vec_payload(&[0.0, f64::NAN]), &vec_payload(&[0.0, 0.0]), &fp32()).unwrap();
        assert_eq!(r.d, MAX_DISCREPANCY);
        assert_eq!(r.worst_index, Some(1));
    }

    #[test]
    fn tokens() {
        let a = ids(PayloadKind::TokenIds, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!(token_mismatch_rate(&a, &a).unwrap().d, 0.0);
        let r = token_mismatch_rate(&ids(PayloadKind::TokenIds, &[1, 2, 9, 4]), &ids(PayloadKind::TokenIds, &[1, 2, 3, 4])).unwrap();
        assert_eq!(r.d, 0.25);
        let r = token_mismatch_rate(&ids(PayloadKind::TokenIds, &[1, 2, 3, 4]), &ids(PayloadKind::TokenIds, &[1, 2])).unwrap();
        assert_eq!(r.d, 1.0);
        let r = token_mismatch_rate(&ids(PayloadKind::TokenIds, &[1]), &ids(PayloadKind::TokenIds, &[1, 2, 3, 4])).unwrap();
        assert_eq!(r.d, 0.75);
    }

    #[test]
    fn topk() {
        let a = ids(PayloadKind::RankedIds, &(0..30).collect::<Vec<_>>());
        assert_eq!(topk_rank_disagreement(&a, &a, 20).unwrap().d, 0.0);
        let b = ids(PayloadKind::RankedIds, &(100..130).collect::<Vec<_>>());
        assert_eq!(topk_rank_disagreement(&a, &b, 20).unwrap().d, 1.0);
        // ref top-4 {a,b,c,d} = {0,1,2,3}; cand {a,b,x,y}
        let r = ids(PayloadKind::RankedIds, &[0, 1, 2, 3, 7]);
        let c = ids(PayloadKind::RankedIds, &[1, 0, 8, 9, 2]);
        assert_eq!(topk_rank_disagreement(&c, &r, 4).unwrap().d, 0.5);
        assert_eq!(topk_rank_disagreement(&c, &r, 6), Err(DiscrepancyError::KExceedsLength { k: 6, len: 5 }));
    }

    #[test]
    fn scalar() {
        let s = |v| OutputPayload::scalar(v);
        assert_eq!(scalar_abs_delta(&s(0.12), &s(0.12)).unwrap().d, 0.0);
        assert!((scalar_abs_delta(&s(0.13), &s(0.10)).unwrap().d - 0.03).abs() < 1e-15);
        assert!((scalar_abs_delta(&s(0.05), &s(0.10)).unwrap().d - 0.05).abs() < 1e-15);
        assert_eq!(scalar_abs_delta(&s(f64::INFINITY), &s(0.1)), Err(DiscrepancyError::NonFiniteInput));
    }

    fn scenario(cand: OutputPayload, reference: OutputPayload) -> ScenarioResult {
        ScenarioResult {
            scenario_id: "s0".into(),
            ref_output: reference,
            cand_output: cand,
            ref_runtime_s: 1.0,
            cand_runtime_s: 1.0,
            ref_throughput: 1.0,
            cand_throughput: 1.0,
            ref_latency_s: 1.0,
            cand_latency_s: 1.0,
            discrepancy: None,
            ref_run_times_s: vec![],
            cand_run_times_s: vec![],
        }
    }

    #[test]
    fn dispatch_routes_and_caches() {
        let fam = FamilySpec::new("dense", DiscrepancyKind::ElementwiseNumeric, 3.0, 1.0).unwrap();
        let mut s = scenario(vec_payload(&[2e-5]), vec_payload(&[0.0]));
        let r = dispatch_discrepancy(&fam, &mut s, &fp32()).unwrap();
        assert_eq!(r.kind, DiscrepancyKind::ElementwiseNumeric);
        assert_eq!(s.discrepancy, Some(r.d));
        assert_eq!(r.scenario_id.as_deref(), Some("s0"));

        let tokens = FamilySpec::new("llm", DiscrepancyKind::TokenSequence, 0.5, 1.0).unwrap();
        let mut s = scenario(vec_payload(&[0.0]), vec_payload(&[0.0]));
        assert!(matches!(dispatch_discrepancy(&tokens, &mut s, &fp32()), Err(DiscrepancyError::KindMismatch { .. })));
        assert_eq!(s.discrepancy, None);
    }

    #[test]
    fn dispatch_ranking_uses_default_k() {
        let fam = FamilySpec::new("retrieval", DiscrepancyKind::RankingTopk, 0.5, 1.0).unwrap();
        assert_eq!(fam.rank_k(), 20);
        let r: Vec<u64> = (0..25).collect();
        let mut c = r.clone();
        c.swap(19, 20);
        let mut s = scenario(ids(PayloadKind::RankedIds, &c), ids(PayloadKind::RankedIds, &r));
        let rep = dispatch_discrepancy(&fam, &mut s, &fp32()).unwrap();
        assert_eq!(rep.d, 1.0 - 19.0 / 20.0);
        let mut short = scenario(ids(PayloadKind::RankedIds, &[1, 2]), ids(PayloadKind::RankedIds, &[1, 2]));
        assert!(dispatch_discrepancy(&fam, &mut short, &fp32()).is_err());
    }

    proptest! {
        #[test]
        fn ratio_swap_bounded(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..16)) {
            let tol = fp32();
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let pa = vec_payload(&a);
            let pb = vec_payload(&b);
            let ab = elementwise_error_ratio(&pa, &pb, &tol).unwrap().d;
            let ba = elementwise_error_ratio(&pb, &pa, &tol).unwrap().d;
            // per-element ratios differ by exactly the band ratio, so the maxima
            // are bounded by the largest such factor
            let factor = a.iter().zip(&b)
                .map(|(&x, &y)| (tol.band(x) / tol.band(y)).max(tol.band(y) / tol.band(x)))
                .fold(1.0f64, f64::max);
            prop_assert!(ab <= ba * factor * (1.0 + 1e-12) + 1e-300);
            prop_assert!(ba <= ab * factor * (1.0 + 1e-12) + 1e-300);
            prop_assert_eq!(elementwise_error_ratio(&pa, &pa, &tol).unwrap().d, 0.0);
        }

        #[test]
        fn ratio_monotone_in_deviation(
            base in proptest::collection::vec(-10.0f64..10.0, 1..16),
            dev in proptest::collection::vec(-1e-2f64..1e-2, 16),
            c in 1.0f64..10.0,
        ) {
            let tol = fp32();
            let reference = vec_payload(&base);
            let cand1: Vec<f64> = base.iter().zip(&dev).map(|(&r, &e)| r + e).collect();
            let cand2: Vec<f64> = base.iter().zip(&dev).map(|(&r, &e)| r + c * e).collect();
            let d1 = elementwise_error_ratio(&vec_payload(&cand1), &reference, &tol).unwrap().d;
            let d2 = elementwise_error_ratio(&vec_payload(&cand2), &reference, &tol).unwrap().d;
            prop_assert!(d2 >= d1 * (1.0 - 1e-9) - 1e-9);
        }

        #[test]
        fn scalar_monotone(r in -1.0f64..1.0, e in -1.0f64..1.0, c in 1.0f64..10.0) {
            let d1 = scalar_abs_delta(&OutputPayload::scalar(r + e), &OutputPayload::scalar(r)).unwrap().d;
            let d2 = scalar_abs_delta(&OutputPayload::scalar(r + c * e), &OutputPayload::scalar(r)).unwrap().d;
            prop_assert!(d2 >= d1 * (1.0 - 1e-9) - 1e-15);
        }

        #[test]
        fn bounded_kinds_stay_in_unit_interval(
            a in proptest::collection::vec(0u64..5, 1..12),
            b in proptest::collection::vec(0u64..5, 1..12),
        ) {
            let d = token_mismatch_rate(&ids(PayloadKind::TokenIds, &a), &ids(PayloadKind::TokenIds, &b)).unwrap().d;
            prop_assert!((0.0..=1.0).contains(&d));
            let k = a.len().min(b.len());
            let d = topk_rank_disagreement(&ids(PayloadKind::RankedIds, &a), &ids(PayloadKind::RankedIds, &b), k).unwrap().d;
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
