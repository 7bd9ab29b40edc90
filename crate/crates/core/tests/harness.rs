use fk_core::harness::dag::register_task_graph;
use fk_core::harness::protocol::WorkerLauncher;
use fk_core::harness::{standard_suite, AgentBinding, Harness, HarnessError, WorkerProgram};
use fk_core::model::{RunStatus, TaskNode};

fn harness() -> Harness {
    Harness::new(WorkerLauncher::new(env!("CARGO_BIN_EXE_fk-worker")), standard_suite(42).unwrap())
}

fn run(h: &Harness, item: &str, locator: &str) -> fk_core::RunRecord {
    let bundle = h.suite.bundles[item].clone();
    h.run_pair("agent", item, &WorkerProgram::candidate(locator).unwrap(), &bundle).unwrap()
}

#[test]
fn type_and_memory_faults_map_to_their_statuses() {
    let h = harness();
    assert_eq!(run(&h, "silu", "builtin:silu:type").status, RunStatus::TypeError);
    #[cfg(unix)]
    assert_eq!(run(&h, "silu", "builtin:silu:segv").status, RunStatus::IllegalMemory);
}

#[test]
fn crash_after_first_request_still_fails_the_item() {
    let h = harness();
    let rec = run(&h, "linear", "builtin:linear:crash@2");
    assert_eq!(rec.status, RunStatus::Crash);
    assert!(rec.scenarios.is_empty());
}

#[test]
fn noisy_candidate_is_scored_not_rejected() {
    let h = harness();
    let rec = run(&h, "softmax", "builtin:softmax:noisy=0.5");
    assert_eq!(rec.status, RunStatus::Ok);
    let g = h.suite.manifest.threshold("softmax").unwrap().g;
    assert!(rec.scenarios.iter().all(|s| s.discrepancy.unwrap() > g));
}

#[test]
fn slow_candidate_loses_speed() {
    let h = harness();
    let fast = run(&h, "matmul", "builtin:matmul");
    let slow = run(&h, "matmul", "builtin:matmul:slow=8");
    let mean = |r: &fk_core::RunRecord| r.scenarios.iter().map(|s| s.cand_runtime_s).sum::<f64>();
    assert!(mean(&slow) > 3.0 * mean(&fast), "slow {} fast {}", mean(&slow), mean(&fast));
}

#[test]
fn missing_executable_candidate_is_rejected_up_front() {
    assert!(matches!(
        WorkerProgram::candidate("/nonexistent/kernel"),
        Err(HarnessError::UnresolvableLocator(_))
    ));
}

#[test]
fn unresolvable_binding_counts_as_crash() {
    let h = harness();
    let manifest = h.suite.manifest.clone();
    let cards = h
        .run_eval_sweep(&[AgentBinding::new("a", "silu", "/nonexistent/kernel")], &manifest)
        .unwrap();
    let silu = cards["a"].items.iter().find(|i| i.item_id == "silu").unwrap();
    assert_eq!(silu.status, RunStatus::Crash);
    assert_eq!(cards["a"].items.iter().filter(|i| i.status == RunStatus::Blocked).count(), cards["a"].item_count - 1);
}

#[test]
fn sweep_rejects_unknown_items_and_duplicate_bindings() {
    let h = harness();
    let m = h.suite.manifest.clone();
    assert!(matches!(
        h.run_eval_sweep(&[AgentBinding::new("a", "conv", "builtin:linear")], &m),
        Err(HarnessError::UnknownItem(_))
    ));
    let dup = [AgentBinding::new("a", "silu", "builtin:silu"), AgentBinding::new("a", "silu", "builtin:silu")];
    assert!(h.run_eval_sweep(&dup, &m).is_err());
}

#[test]
fn end_to_end_measurements_are_positive() {
    let h = harness();
    // Blocks take their own captured inputs, not model prompts.
    let workload = h.suite.bundles["block"].scenarios.clone();
    let e2e = h.run_e2e("block", &workload).unwrap();
    assert_eq!(e2e.measurements.len(), workload.len());
    assert!(e2e.measurements.iter().all(|m| m.runtime_s > 0.0 && m.throughput > 0.0));
    assert!(matches!(h.run_e2e("block", &[]), Err(HarnessError::CompositionFailure(_))));
    assert!(matches!(h.run_e2e("nope", &workload), Err(HarnessError::UnknownTask(_))));
}

#[test]
fn task_graph_validation() {
    let l1 = TaskNode::new("a", "a", 1, Vec::<String>::new()).unwrap();
    let l2 = TaskNode::new("b", "b", 2, ["a"]).unwrap();
    assert!(register_task_graph([l1.clone(), l2.clone()]).is_ok());
    assert!(matches!(register_task_graph([l1.clone(), l1.clone()]), Err(HarnessError::DuplicateTask(_))));
    assert!(matches!(register_task_graph([l2.clone()]), Err(HarnessError::DanglingDependency { .. })));
    let flat = TaskNode::new("c", "c", 1, ["a"]).unwrap();
    assert!(matches!(register_task_graph([l1, flat]), Err(HarnessError::LevelViolation { .. })));
}
