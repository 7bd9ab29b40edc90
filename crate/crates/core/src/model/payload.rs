use serde::{Deserialize, Serialize};

use super::ModelError;

/// What an [`OutputPayload`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    NumericTensor,
    TokenIds,
    RankedIds,
    Scalar,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NumericTensor => "numeric-tensor",
            Self::TokenIds => "token-ids",
            Self::RankedIds => "ranked-ids",
            Self::Scalar => "scalar",
        }
    }

    fn holds_ids(self) -> bool {
        matches!(self, Self::TokenIds | Self::RankedIds)
    }
}

/// Flat host-memory carrier for one output (or input) of a kernel.
///
/// Integer kinds store their ids as exactly-representable `f64` values so
/// every payload shares one wire shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PayloadRepr")]
pub struct OutputPayload {
    kind: PayloadKind,
    shape: Vec<usize>,
    #[serde(with = "crate::format::float_vec")]
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct PayloadRepr {
    kind: PayloadKind,
    shape: Vec<usize>,
    #[serde(with = "crate::format::float_vec")]
    values: Vec<f64>,
}

impl TryFrom<PayloadRepr> for OutputPayload {
    type Error = ModelError;

    fn try_from(repr: PayloadRepr) -> Result<Self, Self::Error> {
        OutputPayload::new(repr.kind, repr.shape, repr.values)
    }
}

impl OutputPayload {
    pub fn new(kind: PayloadKind, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, ModelError> {
        if kind == PayloadKind::Scalar {
            if !shape.is_empty() || values.len() != 1 {
                return Err(ModelError::InvalidPayload(
                    "scalar payload must have empty shape and exactly one value".into(),
                ));
            }
        } else {
            if shape.contains(&0) {
                return Err(ModelError::InvalidPayload("shape dimensions must be positive".into()));
            }
            let expected: usize = shape.iter().product();
            if shape.is_empty() || expected != values.len() {
                return Err(ModelError::InvalidPayload(format!(
                    "shape {:?} implies {} values, got {}",
                    shape,
                    if shape.is_empty() { 0 } else { expected },
                    values.len()
                )));
            }
        }
        if kind.holds_ids() {
            if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
                return Err(ModelError::InvalidPayload(format!(
                    "{} payload holds non-id value {bad}",
                    kind.as_str()
                )));
            }
        }
        Ok(Self { kind, shape, values })
    }

    pub fn tensor(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(PayloadKind::NumericTensor, shape, values)
    }

    /// One-dimensional numeric tensor.
    pub fn vector(values: Vec<f64>) -> Result<Self, ModelError> {
        Self::tensor(vec![values.len()], values)
    }

    pub fn token_ids(shape: Vec<usize>, ids: &[u64]) -> Result<Self, ModelError> {
        Self::new(PayloadKind::TokenIds, shape, ids.iter().map(|&i| i as f64).collect())
    }

    pub fn ranked_ids(ids: &[u64]) -> Result<Self, ModelError> {
        Self::new(PayloadKind::RankedIds, vec![ids.len()], ids.iter().map(|&i| i as f64).collect())
    }

    pub fn scalar(value: f64) -> Self {
        Self { kind: PayloadKind::Scalar, shape: Vec::new(), values: vec![value] }
    }

    pub fn kind(&self) -> PayloadKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids for the integer kinds; `None` for numeric kinds.
    pub fn ids(&self) -> Option<Vec<u64>> {
        self.kind.holds_ids().then(|| self.values.iter().map(|&v| v as u64).collect())
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Bitwise equality, treating NaNs with equal bit patterns as equal.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.shape == other.shape
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_values() {
        assert!(OutputPayload::tensor(vec![2, 2], vec![1.0; 4]).is_ok());
        assert!(matches!(
            OutputPayload::tensor(vec![2, 3], vec![1.0; 4]),
            Err(ModelError::InvalidPayload(_))
        ));
        assert!(OutputPayload::tensor(vec![0], vec![]).is_err());
        assert!(OutputPayload::tensor(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn ids_must_be_nonnegative_integers() {
        assert!(OutputPayload::new(PayloadKind::TokenIds, vec![2], vec![1.0, 2.0]).is_ok());
        assert!(OutputPayload::new(PayloadKind::TokenIds, vec![2], vec![1.0, -2.0]).is_err());
        assert!(OutputPayload::new(PayloadKind::RankedIds, vec![1], vec![0.5]).is_err());
        let p = OutputPayload::ranked_ids(&[4, 2, 9]).unwrap();
        assert_eq!(p.ids().unwrap(), vec![4, 2, 9]);
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = OutputPayload::scalar(0.25);
        assert!(s.shape().is_empty());
        assert!(OutputPayload::new(PayloadKind::Scalar, vec![1], vec![0.25]).is_err());
    }

    #[test]
    fn deserialization_validates() {
        let bad = r#"{"kind":"numeric-tensor","shape":[3],"values":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<OutputPayload>(bad).is_err());
        let nan = r#"{"kind":"numeric-tensor","shape":[2],"values":[1.0,"NaN"]}"#;
        let p: OutputPayload = serde_json::from_str(nan).unwrap();
        assert!(p.has_nan());
    }
}
