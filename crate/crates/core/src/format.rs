//! On-disk and on-wire document formats.
//!
//! | schema            | shape                                   |
//! |-------------------|-----------------------------------------|
//! | `fk-records/1`    | one JSON object per line, tagged `record` |
//! | `fk-manifest/1`   | one JSON document                        |
//! | `fk-capture/1`    | one JSON document with `bundles`         |
//! | `fk-scorecard/1`  | one JSON document with `cards`           |
//!
//! Every line or document carries a `schema` field. Object keys are emitted
//! in sorted order, so equal values always serialize to equal bytes.
//! Non-finite floats are written as the strings `"NaN"`, `"inf"`, `"-inf"`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::calibration::CalibrationInput;
use crate::harness::allreduce::AllreduceOutcome;
use crate::harness::{AgentBinding, CaptureBundle, ReplayCheck};
use crate::model::{BenchmarkItem, FamilySpec, RunRecord, ScoreCard, TaskNode, ThresholdManifest};
use crate::routing::ExpertLoad;
use crate::statistics::{GapRow, IntervalRow, SweepRow};

pub const RECORDS_SCHEMA: &str = "fk-records/1";
pub const MANIFEST_SCHEMA: &str = "fk-manifest/1";
pub const CAPTURE_SCHEMA: &str = "fk-capture/1";
pub const SCORECARD_SCHEMA: &str = "fk-scorecard/1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: expected schema `{expected}`, found `{found}`")]
    WrongSchema { line: usize, expected: &'static str, found: String },
    #[error("line {line}: missing `schema` field")]
    MissingSchema { line: usize },
    #[error("line {line}: expected a JSON object")]
    NotAnObject { line: usize },
}

/// One line of an `fk-records/1` stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
pub enum Record {
    Family(FamilySpec),
    Item(BenchmarkItem),
    Run(RunRecord),
    Task(TaskNode),
    Load(ExpertLoad),
    Calibration(CalibrationInput),
    Binding(AgentBinding),
    SweepRow(SweepRow),
    GapRow(GapRow),
    Interval(IntervalRow),
    Replay(ReplayCheck),
    Collective(AllreduceOutcome),
}

fn tag_schema<T: Serialize>(schema: &str, value: &T) -> Value {
    let mut v = serde_json::to_value(value).expect("domain values always serialize");
    if let Value::Object(map) = &mut v {
        map.insert("schema".into(), Value::String(schema.into()));
    }
    v
}

fn untag_schema<T: DeserializeOwned>(schema: &'static str, mut v: Value, line: usize) -> Result<T, FormatError> {
    let Value::Object(map) = &mut v else {
        return Err(FormatError::NotAnObject { line });
    };
    match map.remove("schema") {
        Some(Value::String(s)) if s == schema => {}
        Some(other) => {
            let found = other.as_str().map(str::to_string).unwrap_or_else(|| other.to_string());
            return Err(FormatError::WrongSchema { line, expected: schema, found });
        }
        None => return Err(FormatError::MissingSchema { line }),
    }
    serde_json::from_value(v).map_err(|source| FormatError::Json { line, source })
}

/// Single-line encoding used by record streams and the worker protocol.
pub fn encode_line<T: Serialize>(schema: &str, value: &T) -> String {
    tag_schema(schema, value).to_string()
}

pub fn decode_line<T: DeserializeOwned>(schema: &'static str, line: &str) -> Result<T, FormatError> {
    let v: Value = serde_json::from_str(line).map_err(|source| FormatError::Json { line: 1, source })?;
    untag_schema(schema, v, 1)
}

pub fn encode_record(record: &Record) -> String {
    encode_line(RECORDS_SCHEMA, record)
}

pub fn write_records<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&encode_record(r));
        out.push('\n');
    }
    out
}

/// Parses an `fk-records/1` stream; blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<Record>, FormatError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|source| FormatError::Json { line: line_no, source })?;
        out.push(untag_schema(RECORDS_SCHEMA, v, line_no)?);
    }
    Ok(out)
}

fn to_document<T: Serialize>(schema: &str, value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&tag_schema(schema, value)).expect("serializable");
    s.push('\n');
    s
}

fn from_document<T: DeserializeOwned>(schema: &'static str, text: &str) -> Result<T, FormatError> {
    let v: Value = serde_json::from_str(text).map_err(|source| FormatError::Json { line: 1, source })?;
    untag_schema(schema, v, 1)
}

pub fn manifest_to_string(manifest: &ThresholdManifest) -> String {
    to_document(MANIFEST_SCHEMA, manifest)
}

pub fn parse_manifest(text: &str) -> Result<ThresholdManifest, FormatError> {
    from_document(MANIFEST_SCHEMA, text)
}

#[derive(Serialize, Deserialize)]
struct CaptureDoc {
    bundles: Vec<CaptureBundle>,
}

pub fn capture_to_string(bundles: &[CaptureBundle]) -> String {
    to_document(CAPTURE_SCHEMA, &CaptureDoc { bundles: bundles.to_vec() })
}

pub fn parse_capture(text: &str) -> Result<Vec<CaptureBundle>, FormatError> {
    from_document::<CaptureDoc>(CAPTURE_SCHEMA, text).map(|d| d.bundles)
}

#[derive(Serialize, Deserialize)]
struct ScorecardDoc {
    cards: Vec<ScoreCard>,
}

pub fn scorecards_to_string(cards: &[ScoreCard]) -> String {
    to_document(SCORECARD_SCHEMA, &ScorecardDoc { cards: cards.to_vec() })
}

pub fn parse_scorecards(text: &str) -> Result<Vec<ScoreCard>, FormatError> {
    from_document::<ScorecardDoc>(SCORECARD_SCHEMA, text).map(|d| d.cards)
}

/// `f64` that may be non-finite.
#[derive(Clone, Copy)]
struct Float(f64);

impl Serialize for Float {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Float {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Float(v)),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(Float(f64::NAN)),
                "inf" => Ok(Float(f64::INFINITY)),
                "-inf" => Ok(Float(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}

pub(crate) mod float_vec {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| Float(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Float>::deserialize(d)?.into_iter().map(|f| f.0).collect())
    }
}

pub(crate) mod float {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        Float(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Float::deserialize(d)?.0)
    }
}

pub(crate) mod float_opt {
    use super::Float;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Float).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Float>::deserialize(d)?.map(|f| f.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiscrepancyKind, DtypeTolerance, ItemThreshold};

    #[test]
    fn records_carry_schema_and_tag() {
        let fam = FamilySpec::new("llm", DiscrepancyKind::TokenSequence, 0.5, 1.0).unwrap();
        let line = encode_record(&Record::Family(fam.clone()));
        assert!(line.contains(r#""schema":"fk-records/1""#));
        assert!(line.contains(r#""record":"family""#));
        assert_eq!(parse_records(&line).unwrap(), vec![Record::Family(fam)]);
    }

    #[test]
    fn wrong_schema_rejected() {
        let fam = FamilySpec::new("llm", DiscrepancyKind::TokenSequence, 0.5, 1.0).unwrap();
        let line = encode_line("fk-records/0", &Record::Family(fam));
        assert!(matches!(parse_records(&line), Err(FormatError::WrongSchema { line: 1, .. })));
        assert!(matches!(parse_records("{\"record\":\"family\"}"), Err(FormatError::MissingSchema { .. })));
        assert!(matches!(parse_records("\n\nnot json"), Err(FormatError::Json { line: 3, .. })));
    }

    #[test]
    fn manifest_document_validates_bands() {
        let mut m = ThresholdManifest::new(DtypeTolerance::default_table());
        m.insert("linear", ItemThreshold::new("linear", 1.0, 3.0, 1.0).unwrap()).unwrap();
        m.freeze();
        let text = manifest_to_string(&m);
        assert!(text.contains("fk-manifest/1"));
        assert_eq!(parse_manifest(&text).unwrap(), m);
        let broken = text.replace("\"f\": 3.0", "\"f\": 0.5");
        assert!(parse_manifest(&broken).is_err());
    }
}
