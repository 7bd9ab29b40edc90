use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_id, Dtype, DtypeTolerance, ModelError};

/// Validity threshold applied when an item does not override it.
pub const DEFAULT_TAU: f64 = 1.0;

/// Calibrated band for one item: fully correct at or below `g`, fully wrong
/// at or above `f`, valid when mean correctness reaches `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemThreshold {
    pub g: f64,
    pub f: f64,
    pub tau: f64,
}

impl ItemThreshold {
    pub fn new(item: &str, g: f64, f: f64, tau: f64) -> Result<Self, ModelError> {
        let t = ItemThreshold { g, f, tau };
        t.check(item)?;
        Ok(t)
    }

    fn check(&self, item: &str) -> Result<(), ModelError> {
        if !(self.g.is_finite() && self.f.is_finite() && self.g >= 0.0 && self.f > 0.0 && self.g < self.f) {
            return Err(ModelError::BandViolation { item: item.to_string(), g: self.g, f: self.f });
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ModelError::InvalidTau(self.tau));
        }
        Ok(())
    }
}

/// Per-item thresholds plus the dtype tolerance table.
///
/// `per_item` stores the unscaled thresholds; [`ThresholdManifest::threshold`]
/// applies `tolerance_scale`. Keeping a single cumulative scale makes
/// repeated rescaling exact: scaling by `a` then `b` yields the same bits as
/// scaling once by `a * b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifestRepr")]
pub struct ThresholdManifest {
    per_item: BTreeMap<String, ItemThreshold>,
    dtype_table: Vec<DtypeTolerance>,
    tau_default: f64,
    frozen: bool,
    tolerance_scale: f64,
    #[serde(default)]
    provenance: String,
}

#[derive(Deserialize)]
struct ManifestRepr {
    per_item: BTreeMap<String, ItemThreshold>,
    dtype_table: Vec<DtypeTolerance>,
    tau_default: f64,
    frozen: bool,
    tolerance_scale: f64,
    #[serde(default)]
    provenance: String,
}

impl TryFrom<ManifestRepr> for ThresholdManifest {
    type Error = ModelError;

    fn try_from(r: ManifestRepr) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&r.tau_default) {
            return Err(ModelError::InvalidTau(r.tau_default));
        }
        if !(r.tolerance_scale.is_finite() && r.tolerance_scale > 0.0) {
            return Err(ModelError::InvalidScale(r.tolerance_scale));
        }
        for (item, t) in &r.per_item {
            check_id(item)?;
            t.check(item)?;
        }
        let m = ThresholdManifest {
            per_item: r.per_item,
            dtype_table: r.dtype_table,
            tau_default: r.tau_default,
            frozen: r.frozen,
            tolerance_scale: r.tolerance_scale,
            provenance: r.provenance,
        };
        m.check_scaled_bands(m.tolerance_scale)?;
        Ok(m)
    }
}

impl ThresholdManifest {
    /// An empty, mutable manifest.
    pub fn new(dtype_table: Vec<DtypeTolerance>) -> Self {
        ThresholdManifest {
            per_item: BTreeMap::new(),
            dtype_table,
            tau_default: DEFAULT_TAU,
            frozen: false,
            tolerance_scale: 1.0,
            provenance: "calibrated".into(),
        }
    }

    pub fn set_tau_default(&mut self, tau: f64) -> Result<(), ModelError> {
        self.ensure_mutable()?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(ModelError::InvalidTau(tau));
        }
        self.tau_default = tau;
        Ok(())
    }

    /// Insert or replace one item's thresholds.
    pub fn insert(&mut self, item: impl Into<String>, threshold: ItemThreshold) -> Result<(), ModelError> {
        self.ensure_mutable()?;
        let item = item.into();
        check_id(&item)?;
        threshold.check(&item)?;
        self.per_item.insert(item, threshold);
        Ok(())
    }

    pub fn set_dtype_table(&mut self, table: Vec<DtypeTolerance>) -> Result<(), ModelError> {
        self.ensure_mutable()?;
        self.dtype_table = table;
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn tolerance_scale(&self) -> f64 {
        self.tolerance_scale
    }

    pub fn tau_default(&self) -> f64 {
        self.tau_default
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn dtype_table(&self) -> &[DtypeTolerance] {
        &self.dtype_table
    }

    pub fn len(&self) -> usize {
        self.per_item.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_item.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.per_item.keys().map(String::as_str)
    }

    /// Effective thresholds for `item` at the manifest's tolerance scale.
    pub fn threshold(&self, item: &str) -> Option<ItemThreshold> {
        self.per_item.get(item).map(|t| ItemThreshold {
            g: t.g * self.tolerance_scale,
            f: t.f * self.tolerance_scale,
            tau: t.tau,
        })
    }

    /// Thresholds as calibrated, ignoring the tolerance scale.
    pub fn base_threshold(&self, item: &str) -> Option<ItemThreshold> {
        self.per_item.get(item).copied()
    }

    /// Tolerance for `dtype`, falling back to the built-in default table.
    pub fn tolerance_for(&self, dtype: Dtype) -> DtypeTolerance {
        self.dtype_table
            .iter()
            .find(|t| t.dtype == dtype)
            .copied()
            .unwrap_or_else(|| DtypeTolerance::default_for(dtype))
    }

    /// Copy with the cumulative tolerance scale multiplied by `scale`.
    pub fn rescaled(&self, scale: f64) -> Result<Self, ModelError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelError::InvalidScale(scale));
        }
        let total = self.tolerance_scale * scale;
        if !(total.is_finite() && total > 0.0) {
            return Err(ModelError::InvalidScale(scale));
        }
        self.check_scaled_bands(total)?;
        let mut out = self.clone();
        out.tolerance_scale = total;
        out.provenance = format!("{} x{}", self.provenance_root(), total);
        Ok(out)
    }

    fn provenance_root(&self) -> &str {
        self.provenance.split(" x").next().unwrap_or("")
    }

    fn check_scaled_bands(&self, scale: f64) -> Result<(), ModelError> {
        for (item, t) in &self.per_item {
            let (g, f) = (t.g * scale, t.f * scale);
            if !(g < f && f.is_finite()) {
                return Err(ModelError::BandViolation { item: item.clone(), g, f });
            }
        }
        Ok(())
    }

    fn ensure_mutable(&self) -> Result<(), ModelError> {
        if self.frozen {
            Err(ModelError::FrozenManifest)
        } else {
            Ok(())
        }
    }
}
