//! Threshold calibration: the indistinguishability band `g` from
//! reference-vs-reference nondeterminism, the failure threshold `f` from the
//! knee of a quality-cliff curve, and frozen manifests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discrepancy::{elementwise_error_ratio, DiscrepancyError};
use crate::model::{Dtype, DtypeTolerance, ItemThreshold, ModelError, OutputPayload, ThresholdManifest};

/// In ratio space the dtype band itself sits at 1.0.
pub const BAND_FLOOR: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least two reference replicates, got {0}")]
    FewerThanTwoReplicates(usize),
    #[error("replicates disagree: {0}")]
    Replicates(#[from] DiscrepancyError),
    #[error("invalid cliff curve: {0}")]
    InvalidCurve(String),
    #[error("quality never drops to half of its initial value")]
    DegenerateCurve,
    #[error("quality cliff at or below the band g={g}")]
    CliffInsideBand { g: f64 },
    #[error("nonpositive tolerance scale {0}")]
    NonpositiveScale(f64),
    #[error("manifest must be frozen before scaling")]
    NotFrozen,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Downstream quality as a function of discrepancy, measured by degrading
/// the reference on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct CliffCurve {
    points: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for CliffCurve {
    type Error = CalibrationError;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        CliffCurve::new(points)
    }
}

impl From<CliffCurve> for Vec<(f64, f64)> {
    fn from(c: CliffCurve) -> Self {
        c.points
    }
}

impl CliffCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        if points.len() < 4 {
            return Err(CalibrationError::InvalidCurve(format!("need at least 4 points, got {}", points.len())));
        }
        for &(d, q) in &points {
            if !(d.is_finite() && d >= 0.0) {
                return Err(CalibrationError::InvalidCurve(format!("discrepancy {d} must be finite and nonnegative")));
            }
            if !(0.0..=1.0).contains(&q) {
                return Err(CalibrationError::InvalidCurve(format!("quality {q} outside [0, 1]")));
            }
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(CalibrationError::InvalidCurve("discrepancies must be strictly increasing".into()));
        }
        let first = points[0].1;
        if points.iter().any(|&(_, q)| q > first) {
            return Err(CalibrationError::InvalidCurve("first point must carry the maximum quality".into()));
        }
        Ok(CliffCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Band `g` from all pairs of reference replicates, floored at the dtype band.
///
/// Each pair is compared in both directions so the result does not depend
/// on replicate order.
pub fn calibrate_g(replicates: &[OutputPayload], tol: &DtypeTolerance) -> Result<f64, CalibrationError> {
    if replicates.len() < 2 {
        return Err(CalibrationError::FewerThanTwoReplicates(replicates.len()));
    }
    let mut g = BAND_FLOOR;
    for (i, a) in replicates.iter().enumerate() {
        for b in &replicates[i + 1..] {
            g = g.max(elementwise_error_ratio(a, b, tol)?.d);
            g = g.max(elementwise_error_ratio(b, a, tol)?.d);
        }
    }
    Ok(g)
}

/// Fail threshold `f` at the knee of the quality cliff.
///
/// The knee is the interior point with the largest positive discrete second
/// difference of quality (lowest index on ties). Without positive curvature,
/// or when the knee sits inside the band, the first point whose quality is
/// at most half the initial quality is used instead.
pub fn calibrate_f(curve: &CliffCurve, g: f64) -> Result<f64, CalibrationError> {
    let pts = curve.points();
    let initial = pts[0].1;
    let half = 0.5 * initial;
    let fallback = pts.iter().find(|&&(_, q)| q <= half).map(|&(d, _)| d);
    let Some(fallback) = fallback.filter(|_| initial > 0.0) else {
        return Err(CalibrationError::DegenerateCurve);
    };
    if pts.last().map(|p| p.0).unwrap_or(0.0) <= g {
        return Err(CalibrationError::CliffInsideBand { g });
    }

    let mut knee: Option<(f64, f64)> = None;
    for w in pts.windows(3) {
        let curvature = w[2].1 - 2.0 * w[1].1 + w[0].1;
        if curvature > 0.0 && knee.is_none_or(|(_, best)| curvature > best) {
            knee = Some((w[1].0, curvature));
        }
    }
    match knee {
        Some((d, _)) if d > g => Ok(d),
        _ if fallback > g => Ok(fallback),
        _ => Err(CalibrationError::CliffInsideBand { g }),
    }
}

/// Builds a frozen manifest from `(g, f, tau override)` entries.
pub fn freeze_manifest(
    per_item: &BTreeMap<String, (f64, f64, Option<f64>)>,
    dtype_table: Vec<DtypeTolerance>,
    tau_default: f64,
) -> Result<ThresholdManifest, CalibrationError> {
    let mut manifest = ThresholdManifest::new(dtype_table);
    manifest.set_tau_default(tau_default)?;
    for (item, &(g, f, tau)) in per_item {
        let threshold = ItemThreshold::new(item, g, f, tau.unwrap_or(tau_default))?;
        manifest.insert(item.clone(), threshold)?;
    }
    manifest.freeze();
    Ok(manifest)
}

/// New manifest with every `(g, f)` multiplied by `scale`; the input is left
/// untouched.
pub fn scale_manifest(manifest: &ThresholdManifest, scale: f64) -> Result<ThresholdManifest, CalibrationError> {
    if scale.is_nan() || scale <= 0.0 {
        return Err(CalibrationError::NonpositiveScale(scale));
    }
    if !manifest.is_frozen() {
        return Err(CalibrationError::NotFrozen);
    }
    Ok(manifest.rescaled(scale)?)
}

/// Raw calibration material for one numeric item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub item_id: String,
    pub dtype: Dtype,
    pub replicates: Vec<OutputPayload>,
    pub curve: CliffCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// Calibrates every input and freezes the result.
pub fn calibrate_manifest(
    inputs: &[CalibrationInput],
    dtype_table: Vec<DtypeTolerance>,
    tau_default: f64,
) -> Result<ThresholdManifest, CalibrationError> {
    let lookup = |dtype: Dtype| {
        dtype_table.iter().find(|t| t.dtype == dtype).copied().unwrap_or_else(|| DtypeTolerance::default_for(dtype))
    };
    let mut per_item = BTreeMap::new();
    for input in inputs {
        let g = calibrate_g(&input.replicates, &lookup(input.dtype))?;
        let f = calibrate_f(&input.curve, g)?;
        per_item.insert(input.item_id.clone(), (g, f, input.tau));
    }
    freeze_manifest(&per_item, dtype_table, tau_default)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fp32() -> DtypeTolerance {
        DtypeTolerance::default_for(Dtype::Fp32)
    }

    fn v(values: &[f64]) -> OutputPayload {
        OutputPayload::vector(values.to_vec()).unwrap()
    }

    /// All-ordered-pairs maximum, written independently of `calibrate_g`.
    fn pairwise_oracle(reps: &[Vec<f64>], tol: &DtypeTolerance) -> f64 {
        let mut best = 1.0f64;
        for a in reps {
            for b in reps {
                for (x, r) in a.iter().zip(b) {
                    let diff = (x - r).abs();
                    if diff > 0.0 {
                        best = best.max(diff / (tol.atol + tol.rtol * r.abs()));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn identical_replicates_floor_at_band() {
        let rep = v(&[1.0, 2.0, 3.0]);
        assert_eq!(calibrate_g(&[rep.clone(), rep], &fp32()).unwrap(), 1.0);
    }

    #[test]
    fn observed_nondeterminism_raises_g() {
        let reps = [v(&[0.0, 5.0]), v(&[1.7e-5, 5.0])];
        let g = calibrate_g(&reps, &fp32()).unwrap();
        let oracle = pairwise_oracle(&[vec![0.0, 5.0], vec![1.7e-5, 5.0]], &fp32());
        assert_eq!(g, oracle);
        assert!((g - 1.7).abs() < 1e-12);
    }

    #[test]
    fn small_disagreements_stay_at_floor() {
        // pairwise ratios roughly 0.3, 0.8, 0.5
        let reps = [v(&[0.0]), v(&[3e-6]), v(&[8e-6])];
        let g = calibrate_g(&reps, &fp32()).unwrap();
        assert!(pairwise_oracle(&[vec![0.0], vec![3e-6], vec![8e-6]], &fp32()) == 1.0);
        assert_eq!(g, 1.0);
    }

    #[test]
    fn replicate_errors() {
        assert_eq!(calibrate_g(&[v(&[1.0])], &fp32()), Err(CalibrationError::FewerThanTwoReplicates(1)));
        assert!(matches!(calibrate_g(&[v(&[1.0]), v(&[1.0, 2.0])], &fp32()), Err(CalibrationError::Replicates(_))));
    }

    /// Exhaustive second-difference search used to cross-check `calibrate_f`.
    fn knee_oracle(points: &[(f64, f64)]) -> Option<f64> {
        let mut best: Option<(usize, f64)> = None;
        for i in 1..points.len() - 1 {
            let c = points[i + 1].1 - 2.0 * points[i].1 + points[i - 1].1;
            if c > 0.0 && best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| points[i].0)
    }

    #[test]
    fn knee_at_collapse() {
        let pts = vec![(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 0.2), (4.0, 0.1)];
        assert_eq!(knee_oracle(&pts), Some(3.0));
        let curve = CliffCurve::new(pts).unwrap();
        assert_eq!(calibrate_f(&curve, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn linear_decay_uses_half_quality_fallback() {
        let pts = vec![(0.0, 1.0), (2.0, 0.75), (4.0, 0.5), (6.0, 0.25), (8.0, 0.0)];
        let curve = CliffCurve::new(pts).unwrap();
        assert_eq!(calibrate_f(&curve, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn flat_curve_is_degenerate() {
        let curve = CliffCurve::new(vec![(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]).unwrap();
        assert_eq!(calibrate_f(&curve, 1.0), Err(CalibrationError::DegenerateCurve));
    }

    #[test]
    fn knee_inside_band_falls_back_or_fails() {
        // knee at 0.5 (inside the band for g >= 0.5), half-quality fallback at 3.0
        let curve = CliffCurve::new(vec![(0.0, 1.0), (0.5, 0.6), (1.0, 0.55), (3.0, 0.4), (4.0, 0.39)]).unwrap();
        assert_eq!(calibrate_f(&curve, 2.0).unwrap(), 3.0);
        assert_eq!(calibrate_f(&curve, 3.5), Err(CalibrationError::CliffInsideBand { g: 3.5 }));
        assert_eq!(calibrate_f(&curve, 10.0), Err(CalibrationError::CliffInsideBand { g: 10.0 }));
    }

    #[test]
    fn curve_validation() {
        assert!(CliffCurve::new(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.2)]).is_err());
        assert!(CliffCurve::new(vec![(0.0, 1.0), (1.0, 0.5), (1.0, 0.2), (2.0, 0.1)]).is_err());
        assert!(CliffCurve::new(vec![(0.0, 0.5), (1.0, 0.9), (2.0, 0.2), (3.0, 0.1)]).is_err());
    }

    fn frozen(g: f64, f: f64) -> ThresholdManifest {
        let mut per_item = BTreeMap::new();
        per_item.insert("linear".to_string(), (g, f, None));
        freeze_manifest(&per_item, DtypeTolerance::default_table(), 1.0).unwrap()
    }

    #[test]
    fn freeze_defaults() {
        let m = frozen(1.0, 3.0);
        assert!(m.is_frozen());
        assert_eq!(m.tolerance_scale(), 1.0);
        assert_eq!(m.threshold("linear").unwrap(), ItemThreshold { g: 1.0, f: 3.0, tau: 1.0 });
        let mut bad = BTreeMap::new();
        bad.insert("x".to_string(), (3.0, 3.0, None));
        assert!(matches!(
            freeze_manifest(&bad, vec![], 1.0),
            Err(CalibrationError::Model(ModelError::BandViolation { .. }))
        ));
        let mut m = m;
        assert_eq!(m.insert("y", ItemThreshold { g: 1.0, f: 2.0, tau: 1.0 }), Err(ModelError::FrozenManifest));
    }

    #[test]
    fn scaling() {
        let m = frozen(1.0, 3.0);
        let quarter = scale_manifest(&m, 0.25).unwrap();
        let t = quarter.threshold("linear").unwrap();
        assert_eq!((t.g, t.f), (0.25, 0.75));
        assert_eq!(quarter.tolerance_scale(), 0.25);
        assert_eq!(m.threshold("linear").unwrap().g, 1.0);
        let same = scale_manifest(&m, 1.0).unwrap();
        assert_eq!(same.threshold("linear"), m.threshold("linear"));
        assert_eq!(same.dtype_table(), m.dtype_table());
        assert_eq!(scale_manifest(&m, 0.0), Err(CalibrationError::NonpositiveScale(0.0)));
        let unfrozen = ThresholdManifest::new(vec![]);
        assert_eq!(scale_manifest(&unfrozen, 2.0), Err(CalibrationError::NotFrozen));
    }

    proptest! {
        #[test]
        fn g_permutation_invariant_and_monotone(
            reps in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..6),
            extra in proptest::collection::vec(-1.0f64..1.0, 4),
            rot in 0usize..6,
        ) {
            let tol = fp32();
            let payloads: Vec<OutputPayload> = reps.iter().map(|r| v(r)).collect();
            let g = calibrate_g(&payloads, &tol).unwrap();
            prop_assert_eq!(g, pairwise_oracle(&reps, &tol));
            let mut rotated = payloads.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            rotated.reverse();
            prop_assert_eq!(calibrate_g(&rotated, &tol).unwrap(), g);
            let mut more = payloads.clone();
            more.push(v(&extra));
            prop_assert!(calibrate_g(&more, &tol).unwrap() >= g);
        }

        #[test]
        fn scale_composes_exactly(g in 0.01f64..10.0, w in 0.01f64..10.0, a in 0.01f64..100.0, b in 0.01f64..100.0) {
            let m = frozen(g, g + w);
            let ab = scale_manifest(&scale_manifest(&m, a).unwrap(), b).unwrap();
            let once = scale_manifest(&m, a * b).unwrap();
            let (x, y) = (ab.threshold("linear").unwrap(), once.threshold("linear").unwrap());
            let ulp = |v: f64| f64::from_bits(v.to_bits() + 1) - v;
            prop_assert!((x.g - y.g).abs() <= ulp(y.g.abs()));
            prop_assert!((x.f - y.f).abs() <= ulp(y.f.abs()));
        }

        #[test]
        fn scaling_preserves_band(g in 0.0f64..10.0, w in 1e-6f64..10.0, s in 1e-3f64..1e3) {
            let m = frozen(g, g + w);
            let t = scale_manifest(&m, s).unwrap().threshold("linear").unwrap();
            prop_assert!(t.g < t.f);
        }
    }
}
