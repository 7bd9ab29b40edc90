//! Multi-rank all-reduce check: one worker process per rank, relayed
//! through the orchestrator.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{WireMessage, WorkerFailure, WorkerLauncher, WorkerSession};
use super::{HarnessError, WorkerProgram};
use crate::discrepancy::elementwise_error_ratio;
use crate::model::{DtypeTolerance, OutputPayload, PayloadKind, RunStatus};

pub const DEFAULT_RANKS: usize = 4;

/// One input vector per rank.
#[derive(Debug, Clone, PartialEq)]
pub struct AllreduceScenario {
    pub scenario_id: String,
    pub inputs: Vec<OutputPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllreduceOutcome {
    pub scenario_id: String,
    pub status: RunStatus,
    pub pass: bool,
    /// Worst error ratio over all ranks; infinite when the run failed.
    #[serde(with = "crate::format::float")]
    pub d: f64,
    pub oracle: OutputPayload,
    /// Per-rank outputs; empty when the run failed.
    pub outputs: Vec<OutputPayload>,
    /// Slowest rank's collective time.
    pub elapsed_s: f64,
}

/// Elementwise sum across ranks, accumulated in rank order.
pub fn allreduce_oracle(inputs: &[OutputPayload]) -> Result<OutputPayload, HarnessError> {
    let first = inputs.first().ok_or(HarnessError::TooFewRanks(0))?;
    let mut sum = first.values().to_vec();
    for p in &inputs[1..] {
        if p.shape() != first.shape() {
            return Err(HarnessError::CompositionFailure("rank inputs differ in shape".into()));
        }
        for (s, v) in sum.iter_mut().zip(p.values()) {
            *s += v;
        }
    }
    Ok(OutputPayload::tensor(first.shape().to_vec(), sum)?)
}

pub(crate) struct CollectiveRun {
    pub outputs: Vec<OutputPayload>,
    pub elapsed_s: f64,
}

/// Runs one collective over `inputs.len()` fresh rank processes.
pub(crate) fn run_collective(
    launcher: &WorkerLauncher,
    program: &WorkerProgram,
    inputs: &[OutputPayload],
) -> Result<Result<CollectiveRun, WorkerFailure>, HarnessError> {
    let ranks = inputs.len();
    let (cmd, args) = program.command(launcher);
    let mut sessions = Vec::with_capacity(ranks);
    for rank in 0..ranks {
        sessions.push(WorkerSession::spawn(&cmd, &args, &format!("rank-{rank}"))?);
    }
    let outcome = relay(&mut sessions, program, inputs);
    for s in sessions {
        s.shutdown();
    }
    Ok(outcome)
}

fn relay(
    sessions: &mut [WorkerSession],
    program: &WorkerProgram,
    inputs: &[OutputPayload],
) -> Result<CollectiveRun, WorkerFailure> {
    let ranks = sessions.len();
    for (rank, (s, input)) in sessions.iter_mut().zip(inputs).enumerate() {
        s.send(&WireMessage::RankInit { rank, ranks, locator: program.locator.clone(), input: input.clone() })?;
    }
    let deadline = Instant::now() + program.timeout();
    let mut results: Vec<Option<(OutputPayload, f64)>> = vec![None; ranks];
    while results.iter().any(Option::is_none) {
        let mut idle = true;
        for rank in 0..ranks {
            let Some(msg) = sessions[rank].try_recv() else { continue };
            idle = false;
            match msg? {
                WireMessage::Send { to, payload } if to < ranks => {
                    sessions[to].send(&WireMessage::Deliver { from: rank, payload })?;
                }
                WireMessage::RankResult { output, elapsed_s } if results[rank].is_none() => {
                    results[rank] = Some((output, elapsed_s));
                }
                WireMessage::Error { message } => return Err(WorkerFailure::Error(message)),
                other => return Err(WorkerFailure::Protocol(format!("rank {rank} sent {other:?}"))),
            }
        }
        if idle {
            if Instant::now() >= deadline {
                for s in sessions.iter_mut() {
                    s.kill();
                }
                return Err(WorkerFailure::Timeout);
            }
            thread::sleep(Duration::from_micros(100));
        }
    }
    let mut outputs = Vec::with_capacity(ranks);
    let mut elapsed_s: f64 = 0.0;
    for (out, t) in results.into_iter().flatten() {
        outputs.push(out);
        elapsed_s = elapsed_s.max(t);
    }
    Ok(CollectiveRun { outputs, elapsed_s })
}

/// Classifies one rank's output against the oracle.
fn judge(output: &OutputPayload, oracle: &OutputPayload, tol: &DtypeTolerance) -> Result<f64, RunStatus> {
    if output.kind() != PayloadKind::NumericTensor {
        return Err(RunStatus::TypeError);
    }
    if output.shape() != oracle.shape() {
        return Err(RunStatus::ShapeError);
    }
    if output.has_nan() {
        return Err(RunStatus::Nan);
    }
    elementwise_error_ratio(output, oracle, tol).map(|r| r.d).map_err(|_| RunStatus::ShapeError)
}

/// Runs `candidate` on every scenario; a scenario passes when every rank's
/// output is within `g` of the elementwise sum.
pub fn allreduce_check(
    launcher: &WorkerLauncher,
    candidate: &WorkerProgram,
    scenarios: &[AllreduceScenario],
    tol: &DtypeTolerance,
    g: f64,
) -> Result<Vec<AllreduceOutcome>, HarnessError> {
    let mut out = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        if sc.inputs.len() < 2 {
            return Err(HarnessError::TooFewRanks(sc.inputs.len()));
        }
        let oracle = allreduce_oracle(&sc.inputs)?;
        let outcome = match run_collective(launcher, candidate, &sc.inputs)? {
            Err(failure) => AllreduceOutcome {
                scenario_id: sc.scenario_id.clone(),
                status: failure.status(),
                pass: false,
                d: f64::INFINITY,
                oracle,
                outputs: Vec::new(),
                elapsed_s: 0.0,
            },
            Ok(run) => {
                let mut d: f64 = 0.0;
                let mut status = RunStatus::Ok;
                for o in &run.outputs {
                    match judge(o, &oracle, tol) {
                        Ok(r) => d = d.max(r),
                        Err(s) => {
                            status = s;
                            d = f64::INFINITY;
                            break;
                        }
                    }
                }
                AllreduceOutcome {
                    scenario_id: sc.scenario_id.clone(),
                    status,
                    pass: status == RunStatus::Ok && d <= g,
                    d,
                    oracle,
                    outputs: run.outputs,
                    elapsed_s: run.elapsed_s,
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_sums_in_rank_order() {
        let a = OutputPayload::vector(vec![1.0, 2.0]).unwrap();
        let b = OutputPayload::vector(vec![0.5, -2.0]).unwrap();
        assert_eq!(allreduce_oracle(&[a, b]).unwrap().values(), &[1.5, 0.0]);
    }
}
