use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_id, ModelError};

/// Discrepancy function family used to compare outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscrepancyKind {
    ElementwiseNumeric,
    TokenSequence,
    RankingTopk,
    ScalarMetric,
}

/// Default `k` for ranking families when none is configured.
pub const DEFAULT_RANK_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr")]
pub struct FamilySpec {
    pub family_id: String,
    pub discrepancy_kind: DiscrepancyKind,
    pub default_fail_threshold: f64,
    pub default_validity_threshold: f64,
    /// Cutoff for `ranking-topk` families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_k: Option<usize>,
}

#[derive(Deserialize)]
struct FamilyRepr {
    family_id: String,
    discrepancy_kind: DiscrepancyKind,
    default_fail_threshold: f64,
    default_validity_threshold: f64,
    #[serde(default)]
    rank_k: Option<usize>,
}

impl TryFrom<FamilyRepr> for FamilySpec {
    type Error = ModelError;

    fn try_from(r: FamilyRepr) -> Result<Self, ModelError> {
        let mut spec = FamilySpec::new(
            r.family_id,
            r.discrepancy_kind,
            r.default_fail_threshold,
            r.default_validity_threshold,
        )?;
        if let Some(k) = r.rank_k {
            spec = spec.with_rank_k(k)?;
        }
        Ok(spec)
    }
}

impl FamilySpec {
    pub fn new(
        family_id: impl Into<String>,
        discrepancy_kind: DiscrepancyKind,
        default_fail_threshold: f64,
        default_validity_threshold: f64,
    ) -> Result<Self, ModelError> {
        let family_id = family_id.into();
        check_id(&family_id)?;
        if !(default_fail_threshold.is_finite() && default_fail_threshold >= 0.0) {
            return Err(ModelError::InvalidFamily {
                family: family_id,
                reason: format!("fail threshold {default_fail_threshold} must be finite and nonnegative"),
            });
        }
        if !(0.0..=1.0).contains(&default_validity_threshold) {
            return Err(ModelError::InvalidTau(default_validity_threshold));
        }
        Ok(Self { family_id, discrepancy_kind, default_fail_threshold, default_validity_threshold, rank_k: None })
    }

    pub fn with_rank_k(mut self, k: usize) -> Result<Self, ModelError> {
        if k == 0 {
            return Err(ModelError::InvalidFamily { family: self.family_id, reason: "rank k must be positive".into() });
        }
        self.rank_k = Some(k);
        Ok(self)
    }

    pub fn rank_k(&self) -> usize {
        self.rank_k.unwrap_or(DEFAULT_RANK_K)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "BF16")]
    Bf16,
    #[serde(rename = "FP8-E4M3")]
    Fp8E4m3,
    #[serde(rename = "FP8-E5M2")]
    Fp8E5m2,
}

impl Dtype {
    pub const ALL: [Dtype; 5] = [Dtype::Fp32, Dtype::Fp16, Dtype::Bf16, Dtype::Fp8E4m3, Dtype::Fp8E5m2];

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Fp32 => "FP32",
            Dtype::Fp16 => "FP16",
            Dtype::Bf16 => "BF16",
            Dtype::Fp8E4m3 => "FP8-E4M3",
            Dtype::Fp8E5m2 => "FP8-E5M2",
        }
    }
}

/// Absolute/relative tolerance pair for one output dtype. The per-element
/// band is `atol + rtol * |ref|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToleranceRepr")]
pub struct DtypeTolerance {
    pub dtype: Dtype,
    pub atol: f64,
    pub rtol: f64,
}

#[derive(Deserialize)]
struct ToleranceRepr {
    dtype: Dtype,
    atol: f64,
    rtol: f64,
}

impl TryFrom<ToleranceRepr> for DtypeTolerance {
    type Error = ModelError;

    fn try_from(r: ToleranceRepr) -> Result<Self, ModelError> {
        DtypeTolerance::new(r.dtype, r.atol, r.rtol)
    }
}

impl DtypeTolerance {
    pub fn new(dtype: Dtype, atol: f64, rtol: f64) -> Result<Self, ModelError> {
        if !(atol.is_finite() && rtol.is_finite() && atol >= 0.0 && rtol >= 0.0) {
            return Err(ModelError::InvalidTolerance(format!("atol={atol}, rtol={rtol} must be finite and nonnegative")));
        }
        if atol == 0.0 && rtol == 0.0 {
            return Err(ModelError::InvalidTolerance("atol and rtol cannot both be zero".into()));
        }
        Ok(Self { dtype, atol, rtol })
    }

    /// Default numerical-correctness thresholds per output dtype.
    pub fn default_for(dtype: Dtype) -> Self {
        let (atol, rtol) = match dtype {
            Dtype::Fp32 => (1e-5, 1e-3),
            Dtype::Fp16 | Dtype::Bf16 => (1e-2, 1e-2),
            Dtype::Fp8E4m3 => (0.125, 0.125),
            Dtype::Fp8E5m2 => (0.125, 0.25),
        };
        Self { dtype, atol, rtol }
    }

    pub fn default_table() -> Vec<Self> {
        Dtype::ALL.iter().map(|&d| Self::default_for(d)).collect()
    }

    /// Width of the band around `reference`.
    pub fn band(&self, reference: f64) -> f64 {
        self.atol + self.rtol * reference.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ItemRepr")]
pub struct BenchmarkItem {
    pub item_id: String,
    pub family_id: String,
    pub level: u8,
    pub dtype: Dtype,
    pub scenario_ids: Vec<String>,
    /// Worker-program locator for the trusted reference implementation.
    pub reference_runner: String,
}

#[derive(Deserialize)]
struct ItemRepr {
    item_id: String,
    family_id: String,
    level: u8,
    dtype: Dtype,
    scenario_ids: Vec<String>,
    reference_runner: String,
}

impl TryFrom<ItemRepr> for BenchmarkItem {
    type Error = ModelError;

    fn try_from(r: ItemRepr) -> Result<Self, ModelError> {
        BenchmarkItem::new(r.item_id, r.family_id, r.level, r.dtype, r.scenario_ids, r.reference_runner)
    }
}

impl BenchmarkItem {
    pub fn new(
        item_id: impl Into<String>,
        family_id: impl Into<String>,
        level: u8,
        dtype: Dtype,
        scenario_ids: Vec<String>,
        reference_runner: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let item_id = item_id.into();
        let family_id = family_id.into();
        check_id(&item_id)?;
        check_id(&family_id)?;
        if !(1..=4).contains(&level) {
            return Err(ModelError::InvalidLevel(level));
        }
        if scenario_ids.is_empty() {
            return Err(ModelError::EmptyScenarioList(item_id));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &scenario_ids {
            check_id(id)?;
            if !seen.insert(id.as_str()) {
                return Err(ModelError::DuplicateId(format!("{item_id}/{id}")));
            }
        }
        Ok(Self { item_id, family_id, level, dtype, scenario_ids, reference_runner: reference_runner.into() })
    }
}

/// Validated, immutable set of families and items.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    families: BTreeMap<String, FamilySpec>,
    items: BTreeMap<String, BenchmarkItem>,
}

/// Checks cross-references and uniqueness and returns the registry.
pub fn validate_registry(families: Vec<FamilySpec>, items: Vec<BenchmarkItem>) -> Result<Registry, ModelError> {
    let mut fam_map = BTreeMap::new();
    for fam in families {
        if fam_map.contains_key(&fam.family_id) {
            return Err(ModelError::DuplicateId(fam.family_id));
        }
        fam_map.insert(fam.family_id.clone(), fam);
    }
    let mut item_map = BTreeMap::new();
    for item in items {
        if item.scenario_ids.is_empty() {
            return Err(ModelError::EmptyScenarioList(item.item_id));
        }
        if !fam_map.contains_key(&item.family_id) {
            return Err(ModelError::DanglingFamilyReference { item: item.item_id, family: item.family_id });
        }
        if item_map.contains_key(&item.item_id) {
            return Err(ModelError::DuplicateId(item.item_id));
        }
        item_map.insert(item.item_id.clone(), item);
    }
    Ok(Registry { families: fam_map, items: item_map })
}

impl Registry {
    pub fn families(&self) -> impl Iterator<Item = &FamilySpec> {
        self.families.values()
    }

    pub fn items(&self) -> impl Iterator<Item = &BenchmarkItem> {
        self.items.values()
    }

    pub fn family(&self, id: &str) -> Option<&FamilySpec> {
        self.families.get(id)
    }

    pub fn item(&self, id: &str) -> Option<&BenchmarkItem> {
        self.items.get(id)
    }

    pub fn family_of(&self, item_id: &str) -> Option<&FamilySpec> {
        self.items.get(item_id).and_then(|i| self.families.get(&i.family_id))
    }

    pub fn family_count(&self) -> usize {
        self.families.len()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    /// Items of one family, in id order.
    pub fn items_of<'a>(&'a self, family_id: &'a str) -> impl Iterator<Item = &'a BenchmarkItem> + 'a {
        self.items.values().filter(move |i| i.family_id == family_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(id: &str) -> FamilySpec {
        FamilySpec::new(id, DiscrepancyKind::ElementwiseNumeric, 3.0, 1.0).unwrap()
    }

    fn item(id: &str, fam: &str) -> BenchmarkItem {
        BenchmarkItem::new(id, fam, 1, Dtype::Fp32, vec!["s0".into(), "s1".into()], "builtin:linear:reference").unwrap()
    }

    #[test]
    fn minimal_registry() {
        let reg = validate_registry(vec![family("llm")], vec![item("linear", "llm")]).unwrap();
        assert_eq!(reg.family_count(), 1);
        assert_eq!(reg.item_count(), 1);
        assert_eq!(reg.family_of("linear").unwrap().family_id, "llm");
    }

    #[test]
    fn dangling_family() {
        let err = validate_registry(vec![family("llm")], vec![item("linear", "vision")]).unwrap_err();
        assert!(matches!(err, ModelError::DanglingFamilyReference { .. }));
    }

    #[test]
    fn duplicate_item() {
        let err = validate_registry(vec![family("llm")], vec![item("linear", "llm"), item("linear", "llm")]).unwrap_err();
        assert_eq!(err, ModelError::DuplicateId("linear".into()));
        let err = validate_registry(vec![family("llm"), family("llm")], vec![]).unwrap_err();
        assert_eq!(err, ModelError::DuplicateId("llm".into()));
    }

    #[test]
    fn empty_and_duplicate_scenarios() {
        let err = BenchmarkItem::new("x", "llm", 1, Dtype::Fp32, vec![], "r").unwrap_err();
        assert_eq!(err, ModelError::EmptyScenarioList("x".into()));
        let err = BenchmarkItem::new("x", "llm", 1, Dtype::Fp32, vec!["a".into(), "a".into()], "r").unwrap_err();
        assert!(matches!(err, ModelError::DuplicateId(_)));
        assert!(matches!(
            BenchmarkItem::new("x", "llm", 5, Dtype::Fp32, vec!["a".into()], "r"),
            Err(ModelError::InvalidLevel(5))
        ));
    }

    #[test]
    fn tolerance_table() {
        let fp32 = DtypeTolerance::default_for(Dtype::Fp32);
        assert_eq!((fp32.atol, fp32.rtol), (1e-5, 1e-3));
        let bf16 = DtypeTolerance::default_for(Dtype::Bf16);
        assert_eq!((bf16.atol, bf16.rtol), (1e-2, 1e-2));
        let e4 = DtypeTolerance::default_for(Dtype::Fp8E4m3);
        assert_eq!((e4.atol, e4.rtol), (0.125, 0.125));
        let e5 = DtypeTolerance::default_for(Dtype::Fp8E5m2);
        assert_eq!((e5.atol, e5.rtol), (0.125, 0.25));
        assert!(DtypeTolerance::new(Dtype::Fp32, 0.0, 0.0).is_err());
        assert!(DtypeTolerance::new(Dtype::Fp32, -1.0, 0.1).is_err());
    }

    #[test]
    fn family_validity_threshold_range() {
        assert!(matches!(
            FamilySpec::new("f", DiscrepancyKind::TokenSequence, 0.5, 1.5),
            Err(ModelError::InvalidTau(_))
        ));
        let json = r#"{"family_id":"f","discrepancy_kind":"ranking-topk","default_fail_threshold":0.5,"default_validity_threshold":-0.1}"#;
        assert!(serde_json::from_str::<FamilySpec>(json).is_err());
    }
}
