//! Domain types shared across evaluation stages.
//!
//! Everything here validates on construction (and on deserialization), so a
//! value that exists is a value that satisfies its invariants.

mod manifest;
mod payload;
mod record;
mod registry;
mod scorecard;
mod task;

pub use manifest::{ItemThreshold, ThresholdManifest, DEFAULT_TAU};
pub use payload::{OutputPayload, PayloadKind};
pub use record::{RunRecord, RunStatus, ScenarioResult};
pub use registry::{
    validate_registry, BenchmarkItem, DiscrepancyKind, Dtype, DtypeTolerance, FamilySpec, Registry,
};
pub use scorecard::{ByLambda, FamilyBreakdown, ItemScore, ScoreCard};
pub use task::TaskNode;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("item `{item}` references unknown family `{family}`")]
    DanglingFamilyReference { item: String, family: String },
    #[error("item `{0}` has no scenarios")]
    EmptyScenarioList(String),
    #[error("invalid identifier `{0}`")]
    InvalidId(String),
    #[error("invalid level {0}, expected 1..=4")]
    InvalidLevel(u8),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(String),
    #[error("invalid family `{family}`: {reason}")]
    InvalidFamily { family: String, reason: String },
    #[error("band violation for `{item}`: g={g} must be below f={f}")]
    BandViolation { item: String, g: f64, f: f64 },
    #[error("invalid validity threshold {0}, expected [0, 1]")]
    InvalidTau(f64),
    #[error("manifest is frozen")]
    FrozenManifest,
    #[error("invalid tolerance scale {0}")]
    InvalidScale(f64),
    #[error("invalid run record for `{item}`: {reason}")]
    InvalidRecord { item: String, reason: String },
    #[error("invalid measurement `{field}` = {value}, must be finite and positive")]
    InvalidMeasurement { field: &'static str, value: f64 },
}

/// Identifiers are nonempty and restricted to characters that survive the
/// delimited table formats unquoted.
pub fn check_id(id: &str) -> Result<(), ModelError> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '/' | '#' | '@'));
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidId(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids() {
        assert!(check_id("linear").is_ok());
        assert!(check_id("p0/linear#3").is_ok());
        assert!(check_id("").is_err());
        assert!(check_id("a,b").is_err());
        assert!(check_id("a b").is_err());
    }
}
