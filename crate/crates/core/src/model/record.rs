use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{check_id, BenchmarkItem, ModelError, OutputPayload};

/// Outcome class of one agent x item evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// The agent never produced a runnable kernel for the target.
    Blocked,
    Crash,
    /// Wall-clock timeout assigned by the harness.
    Hang,
    ShapeError,
    IllegalMemory,
    Nan,
    TypeError,
}

impl RunStatus {
    pub const ALL: [RunStatus; 8] = [
        RunStatus::Ok,
        RunStatus::Blocked,
        RunStatus::Crash,
        RunStatus::Hang,
        RunStatus::ShapeError,
        RunStatus::IllegalMemory,
        RunStatus::Nan,
        RunStatus::TypeError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Blocked => "blocked",
            RunStatus::Crash => "crash",
            RunStatus::Hang => "hang",
            RunStatus::ShapeError => "shape-error",
            RunStatus::IllegalMemory => "illegal-memory",
            RunStatus::Nan => "nan",
            RunStatus::TypeError => "type-error",
        }
    }

    pub fn is_ok(self) -> bool {
        self == RunStatus::Ok
    }

    /// Anything other than `blocked` reached the harness.
    pub fn is_attempted(self) -> bool {
        self != RunStatus::Blocked
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outputs and timings of one scenario (request, prompt, seed) of an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub ref_output: OutputPayload,
    pub cand_output: OutputPayload,
    pub ref_runtime_s: f64,
    pub cand_runtime_s: f64,
    pub ref_throughput: f64,
    pub cand_throughput: f64,
    pub ref_latency_s: f64,
    pub cand_latency_s: f64,
    #[serde(default, with = "crate::format::float_opt", skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<f64>,
    /// Raw per-run timings kept for auditing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ref_run_times_s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cand_run_times_s: Vec<f64>,
}

impl ScenarioResult {
    pub fn validate(&self) -> Result<(), ModelError> {
        check_id(&self.scenario_id)?;
        let measurements = [
            ("ref_runtime_s", self.ref_runtime_s),
            ("cand_runtime_s", self.cand_runtime_s),
            ("ref_throughput", self.ref_throughput),
            ("cand_throughput", self.cand_throughput),
            ("ref_latency_s", self.ref_latency_s),
            ("cand_latency_s", self.cand_latency_s),
        ];
        for (field, value) in measurements {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidMeasurement { field, value });
            }
        }
        if let Some(d) = self.discrepancy {
            if d.is_nan() || d < 0.0 {
                return Err(ModelError::InvalidMeasurement { field: "discrepancy", value: d });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RunRecordRepr")]
pub struct RunRecord {
    pub agent_id: String,
    pub item_id: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioResult>,
    /// Opaque profiler output (NCU/NSYS reports and the like).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_attachment: Option<String>,
}

#[derive(Deserialize)]
struct RunRecordRepr {
    agent_id: String,
    item_id: String,
    status: RunStatus,
    #[serde(default)]
    scenarios: Vec<ScenarioResult>,
    #[serde(default)]
    profile_attachment: Option<String>,
}

impl TryFrom<RunRecordRepr> for RunRecord {
    type Error = ModelError;

    fn try_from(r: RunRecordRepr) -> Result<Self, ModelError> {
        let rec = RunRecord {
            agent_id: r.agent_id,
            item_id: r.item_id,
            status: r.status,
            scenarios: r.scenarios,
            profile_attachment: r.profile_attachment,
        };
        rec.validate()?;
        Ok(rec)
    }
}

impl RunRecord {
    pub fn ok(
        agent_id: impl Into<String>,
        item_id: impl Into<String>,
        scenarios: Vec<ScenarioResult>,
    ) -> Result<Self, ModelError> {
        let rec = RunRecord {
            agent_id: agent_id.into(),
            item_id: item_id.into(),
            status: RunStatus::Ok,
            scenarios,
            profile_attachment: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// A record for any non-`ok` status; carries no scenarios.
    pub fn failed(agent_id: impl Into<String>, item_id: impl Into<String>, status: RunStatus) -> Result<Self, ModelError> {
        let rec = RunRecord {
            agent_id: agent_id.into(),
            item_id: item_id.into(),
            status,
            scenarios: Vec::new(),
            profile_attachment: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_profile(mut self, blob: impl Into<String>) -> Self {
        self.profile_attachment = Some(blob.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_id(&self.agent_id)?;
        check_id(&self.item_id)?;
        let invalid = |reason: &str| ModelError::InvalidRecord { item: self.item_id.clone(), reason: reason.into() };
        match (self.status.is_ok(), self.scenarios.is_empty()) {
            (true, true) => return Err(invalid("status ok requires scenario results")),
            (false, false) => return Err(invalid("non-ok status must not carry scenario results")),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenarios {
            s.validate()?;
            if !seen.insert(s.scenario_id.as_str()) {
                return Err(invalid(&format!("duplicate scenario `{}`", s.scenario_id)));
            }
        }
        Ok(())
    }

    /// An ok record must cover every scenario the item declares.
    pub fn check_covers(&self, item: &BenchmarkItem) -> Result<(), ModelError> {
        if !self.status.is_ok() {
            return Ok(());
        }
        let have: BTreeSet<&str> = self.scenarios.iter().map(|s| s.scenario_id.as_str()).collect();
        if let Some(missing) = item.scenario_ids.iter().find(|id| !have.contains(id.as_str())) {
            return Err(ModelError::InvalidRecord {
                item: self.item_id.clone(),
                reason: format!("missing scenario `{missing}`"),
            });
        }
        Ok(())
    }
}
