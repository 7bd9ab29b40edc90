//! `fk`: batch front end for calibrating, running and scoring kernel
//! benchmarks.
//!
//! Exit codes: 0 success, 1 the evaluation found failing kernels, 2 usage or
//! malformed input, 3 internal or reference failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fk_core::calibration::calibrate_manifest;
use fk_core::format::{self, Record};
use fk_core::harness::allreduce::{allreduce_check, AllreduceScenario};
use fk_core::harness::protocol::WorkerLauncher;
use fk_core::harness::suite::{allreduce_inputs, ALLREDUCE_LEN, ALLREDUCE_RANKS};
use fk_core::harness::{standard_suite, AgentBinding, CaptureBundle, Harness, HarnessError, Suite, WorkerProgram};
use fk_core::model::{validate_registry, DtypeTolerance, RunStatus, DEFAULT_TAU};
use fk_core::report;
use fk_core::routing::{ExpertLoad, ToyGate, ToySource};
use fk_core::scoring::{build_scorecard, score_items};
use fk_core::statistics::{
    bootstrap_ci, harness_gap, outcomes_from_scorecard, sensitivity_sweep, BootstrapConfig, GapPolicy, IntervalRow,
    DEFAULT_IMPUTED,
};
use fk_core::{Registry, RunRecord, ScoreCard, ThresholdManifest};

#[derive(Parser, Debug)]
#[command(name = "fk", version, about = "Kernel benchmark evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Records,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Input file; repeat to merge several.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Threshold manifest (fk-manifest/1).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FK_SEED", default_value_t = 42)]
    seed: u64,
    /// Defaults to `records` when writing to --out, `table` otherwise.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Freeze a threshold manifest from calibration records, or emit the
    /// built-in suite's manifest when no input is given.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Score run records (with their families and items) into scorecards.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Rescore run records under scaled tolerances.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 2.0, 5.0])]
        scales: Vec<f64>,
        /// Agent to sweep when the records hold several.
        #[arg(long)]
        agent: Option<String>,
    },
    /// Bootstrap intervals of geomean speedups from scorecards.
    Bootstrap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        replicates: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Harness-gap table under every accounting policy.
    Gap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_IMPUTED)]
        imputed: f64,
        #[arg(long)]
        agent: Option<String>,
    },
    /// Rank scorecards by default score.
    Leaderboard {
        #[command(flatten)]
        common: Common,
    },
    /// Run one candidate against the reference on one item.
    #[command(name = "run-tier1")]
    RunTier1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        item: String,
        #[arg(long)]
        candidate: String,
        #[arg(long, default_value = "candidate")]
        agent: String,
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Run a composed pipeline end to end and capture its sub-kernel calls.
    #[command(name = "run-tier2")]
    RunTier2 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "model")]
        task: String,
    },
    /// Evaluate agent bindings across the whole suite.
    #[command(name = "run-tier3")]
    RunTier3 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Write the built-in suite's capture bundles.
    Capture {
        #[command(flatten)]
        common: Common,
    },
    /// Replay stored bundle outputs into the reference runners.
    Replay {
        #[command(flatten)]
        common: Common,
    },
    /// Check a multi-rank all-reduce candidate against the summation oracle.
    #[command(name = "allreduce-check")]
    AllreduceCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "builtin:allreduce")]
        candidate: String,
        #[arg(long, default_value_t = 20)]
        scenarios: usize,
        #[arg(long, default_value_t = ALLREDUCE_RANKS)]
        ranks: usize,
        #[arg(long, default_value_t = ALLREDUCE_LEN)]
        len: usize,
    },
    /// Expert-load skew from load records, or from the toy gate.
    Routing {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        top: usize,
        /// Tokens per toy-gate source when no input is given.
        #[arg(long, default_value_t = 4096)]
        tokens: usize,
    },
    #[command(hide = true)]
    Worker,
}

/// A failed invocation and its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<u8, Failure>;

trait Classify<T> {
    fn usage(self, what: &str) -> Result<T, Failure>;
    fn internal(self, what: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into().context(what.to_string()) })
    }

    fn internal(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 3, error: e.into().context(what.to_string()) })
    }
}

fn usage_error(msg: String) -> Failure {
    Failure { code: 2, error: anyhow!(msg) }
}

/// Harness errors caused by the invocation exit 2; the rest exit 3.
fn harness<T>(r: Result<T, HarnessError>) -> Result<T, Failure> {
    r.map_err(|e| {
        let code = match e {
            HarnessError::UnknownItem(_)
            | HarnessError::UnknownTask(_)
            | HarnessError::DuplicateTask(_)
            | HarnessError::DanglingDependency { .. }
            | HarnessError::LevelViolation { .. }
            | HarnessError::UnresolvableLocator(_)
            | HarnessError::BundleMismatch { .. }
            | HarnessError::UnfrozenManifest
            | HarnessError::TooFewRanks(_)
            | HarnessError::InvalidTimeout(_)
            | HarnessError::Kernel(_)
            | HarnessError::Model(_) => 2,
            _ => 3,
        };
        Failure { code, error: e.into() }
    })
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage("cannot read input")
}

fn read_records(common: &Common) -> Result<Vec<Record>, Failure> {
    let mut out = Vec::new();
    for p in &common.input {
        out.extend(format::parse_records(&read(p)?).usage(&format!("malformed records in {}", p.display()))?);
    }
    Ok(out)
}

fn read_scorecards(common: &Common) -> Result<Vec<ScoreCard>, Failure> {
    if common.input.is_empty() {
        return Err(usage_error("--input scorecard file required".into()));
    }
    let mut out = Vec::new();
    for p in &common.input {
        out.extend(format::parse_scorecards(&read(p)?).usage(&format!("malformed scorecards in {}", p.display()))?);
    }
    Ok(out)
}

fn read_bundles(common: &Common) -> Result<Vec<CaptureBundle>, Failure> {
    let mut out = Vec::new();
    for p in &common.input {
        out.extend(format::parse_capture(&read(p)?).usage(&format!("malformed capture in {}", p.display()))?);
    }
    Ok(out)
}

fn read_manifest(common: &Common) -> Result<Option<ThresholdManifest>, Failure> {
    match &common.manifest {
        None => Ok(None),
        Some(p) => format::parse_manifest(&read(p)?).usage(&format!("malformed manifest {}", p.display())).map(Some),
    }
}

fn require_manifest(common: &Common) -> Result<ThresholdManifest, Failure> {
    read_manifest(common)?.ok_or_else(|| usage_error("--manifest required".into()))
}

fn suite(seed: u64) -> Result<Suite, Failure> {
    standard_suite(seed).internal("building the standard suite")
}

fn launcher() -> Result<WorkerLauncher, Failure> {
    let exe = std::env::current_exe().internal("locating the fk executable")?;
    Ok(WorkerLauncher::new(exe.to_string_lossy()).with_args(["worker"]))
}

fn harness_for(suite: Suite, timeout: Option<f64>) -> Result<Harness, Failure> {
    let h = Harness::new(launcher()?, suite);
    match timeout {
        Some(t) => harness(h.with_timeout(t)),
        None => Ok(h),
    }
}

/// Writes whichever rendering `--format` selects.
fn emit(common: &Common, records: impl FnOnce() -> String, table: impl FnOnce() -> String) -> Result<(), Failure> {
    let format = common.format.unwrap_or(if common.out.is_some() { Format::Records } else { Format::Table });
    let text = match format {
        Format::Records => records(),
        Format::Table => table(),
    };
    match &common.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).internal("cannot write output"),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).internal("cannot write output")
        }
    }
}

fn records_text(records: Vec<Record>) -> String {
    format::write_records(&records)
}

/// Families, items and runs from a records stream.
fn registry_and_runs(records: Vec<Record>) -> Result<(Registry, Vec<RunRecord>), Failure> {
    let (mut families, mut items, mut runs) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        match r {
            Record::Family(f) => families.push(f),
            Record::Item(i) => items.push(i),
            Record::Run(r) => runs.push(r),
            _ => {}
        }
    }
    let registry = validate_registry(families, items).usage("invalid registry")?;
    Ok((registry, runs))
}

fn runs_by_agent(runs: Vec<RunRecord>) -> BTreeMap<String, Vec<RunRecord>> {
    let mut by_agent: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for r in runs {
        by_agent.entry(r.agent_id.clone()).or_default().push(r);
    }
    by_agent
}

/// True when some attempted item was not valid.
fn found_failures(card: &ScoreCard) -> bool {
    card.items.iter().any(|i| i.status != RunStatus::Blocked && !i.valid)
}

fn exit_for(cards: &[ScoreCard]) -> u8 {
    u8::from(cards.iter().any(found_failures))
}

fn pick_agent<'a, T>(map: &'a BTreeMap<String, T>, agent: Option<&str>) -> Result<(&'a str, &'a T), Failure> {
    match agent {
        Some(a) => map.get_key_value(a).map(|(k, v)| (k.as_str(), v)).ok_or_else(|| usage_error(format!("no agent `{a}` in input"))),
        None if map.len() == 1 => Ok(map.iter().next().map(|(k, v)| (k.as_str(), v)).expect("one entry")),
        None if map.is_empty() => Err(usage_error("input holds no agents".into())),
        None => Err(usage_error(format!("input holds {} agents; pick one with --agent", map.len()))),
    }
}

fn calibrate(common: &Common, tau: f64) -> Outcome {
    let manifest = if common.input.is_empty() {
        suite(common.seed)?.manifest
    } else {
        let inputs: Vec<_> = read_records(common)?
            .into_iter()
            .filter_map(|r| if let Record::Calibration(c) = r { Some(c) } else { None })
            .collect();
        if inputs.is_empty() {
            return Err(usage_error("input holds no calibration records".into()));
        }
        calibrate_manifest(&inputs, DtypeTolerance::default_table(), tau).usage("calibration failed")?
    };
    emit(
        common,
        || format::manifest_to_string(&manifest),
        || {
            let mut t = String::from("item,g,f,tau\n");
            for id in manifest.item_ids() {
                let th = manifest.threshold(id).expect("listed item");
                t.push_str(&format!("{id},{:.6},{:.6},{:.3}\n", th.g, th.f, th.tau));
            }
            t
        },
    )?;
    Ok(0)
}

fn score(common: &Common) -> Outcome {
    let manifest = require_manifest(common)?;
    let (registry, runs) = registry_and_runs(read_records(common)?)?;
    let mut cards = Vec::new();
    for (agent, recs) in runs_by_agent(runs) {
        cards.push(build_scorecard(&agent, &registry, &manifest, &recs).usage(&format!("cannot score agent `{agent}`"))?);
    }
    if cards.is_empty() {
        return Err(usage_error("input holds no run records".into()));
    }
    emit(common, || format::scorecards_to_string(&cards), || cards.iter().map(report::scorecard_table).collect())?;
    Ok(exit_for(&cards))
}

fn sweep(common: &Common, scales: &[f64], agent: Option<&str>) -> Outcome {
    let manifest = require_manifest(common)?;
    let (registry, runs) = registry_and_runs(read_records(common)?)?;
    let by_agent = runs_by_agent(runs);
    let (_, recs) = pick_agent(&by_agent, agent)?;
    let rows = sensitivity_sweep(&registry, recs, &manifest, scales).usage("sweep failed")?;
    emit(
        common,
        || records_text(rows.iter().cloned().map(Record::SweepRow).collect()),
        || report::sweep_table(&rows),
    )?;
    Ok(0)
}

fn bootstrap(common: &Common, replicates: usize, level: f64) -> Outcome {
    let cards = read_scorecards(common)?;
    let cfg = BootstrapConfig { replicates, level, ..BootstrapConfig::with_seed(common.seed) };
    let mut rows = Vec::new();
    for card in &cards {
        let mut push = |label: String, speedups: Vec<f64>| -> Result<(), Failure> {
            if !speedups.is_empty() {
                let ci = bootstrap_ci(&speedups, &cfg).usage(&format!("bootstrap of `{label}` failed"))?;
                rows.push(IntervalRow::new(label, ci));
            }
            Ok(())
        };
        push(card.agent_id.clone(), card.valid_speedups())?;
        for fam in card.per_family.keys() {
            push(format!("{}/{fam}", card.agent_id), card.valid_speedups_of(fam))?;
        }
    }
    emit(
        common,
        || records_text(rows.iter().cloned().map(Record::Interval).collect()),
        || report::interval_table(&rows),
    )?;
    Ok(0)
}

fn gap(common: &Common, imputed: f64, agent: Option<&str>) -> Outcome {
    let cards: BTreeMap<String, ScoreCard> =
        read_scorecards(common)?.into_iter().map(|c| (c.agent_id.clone(), c)).collect();
    let (_, card) = pick_agent(&cards, agent)?;
    let outcomes = outcomes_from_scorecard(card);
    let rows = GapPolicy::ALL
        .into_iter()
        .map(|p| harness_gap(&outcomes, p, imputed))
        .collect::<Result<Vec<_>, _>>()
        .usage("gap accounting failed")?;
    emit(common, || records_text(rows.iter().cloned().map(Record::GapRow).collect()), || report::gap_table(&rows))?;
    Ok(0)
}

fn leaderboard(common: &Common) -> Outcome {
    let mut cards = read_scorecards(common)?;
    cards.sort_by(|a, b| b.score_default.total_cmp(&a.score_default).then_with(|| a.agent_id.cmp(&b.agent_id)));
    emit(common, || format::scorecards_to_string(&cards), || report::emit_leaderboard(&cards))?;
    Ok(0)
}

fn run_tier1(common: &Common, item: &str, candidate: &str, agent: &str, timeout: Option<f64>) -> Outcome {
    let mut suite = suite(common.seed)?;
    if let Some(m) = read_manifest(common)? {
        suite.manifest = m;
    }
    let bundle = match read_bundles(common)?.into_iter().find(|b| b.item_id == item) {
        Some(b) => b,
        None if common.input.is_empty() => suite
            .bundles
            .get(item)
            .cloned()
            .ok_or_else(|| usage_error(format!("unknown item `{item}`")))?,
        None => return Err(usage_error(format!("no bundle for item `{item}` in input"))),
    };
    let h = harness_for(suite, timeout)?;
    let mut program = harness(WorkerProgram::candidate(candidate))?;
    if let Some(t) = timeout {
        program = harness(program.with_timeout(t))?;
    }
    let record = harness(h.run_pair(agent, item, &program, &bundle))?;
    let scored = score_items(&h.suite.registry, &h.suite.manifest, std::slice::from_ref(&record))
        .usage("cannot score run")?
        .into_iter()
        .find(|s| s.item_id == item)
        .expect("registry item");
    emit(
        common,
        || records_text(vec![Record::Run(record.clone())]),
        || {
            let mut t = String::from("agent,item,scenario,status,d\n");
            for sc in &record.scenarios {
                let d = sc.discrepancy.map_or("-".to_string(), |d| format!("{d:.3}"));
                t.push_str(&format!("{agent},{item},{},{},{d}\n", sc.scenario_id, record.status));
            }
            let s = scored.s_blend.map(|b| b.balanced);
            t.push_str(&format!(
                "{agent},{item},(item),{},C={:.3} valid={} s={}\n",
                record.status,
                scored.correctness,
                scored.valid,
                s.map_or("-".to_string(), |s| format!("{s:.3}"))
            ));
            t
        },
    )?;
    Ok(u8::from(!scored.valid))
}

fn run_tier2(common: &Common, task: &str) -> Outcome {
    let suite = suite(common.seed)?;
    let workload = suite.workload.clone();
    let h = harness_for(suite, None)?;
    let result = harness(h.run_e2e(task, &workload))?;
    emit(
        common,
        || format::capture_to_string(&result.bundles),
        || {
            let mut t = String::from("task,scenario,runtime_s,throughput\n");
            for m in &result.measurements {
                t.push_str(&format!("{task},{},{:.3e},{:.3}\n", m.scenario_id, m.runtime_s, m.throughput));
            }
            for b in &result.bundles {
                t.push_str(&format!("# bundle {} item {} scenarios {}\n", b.bundle_id, b.item_id, b.scenarios.len()));
            }
            t
        },
    )?;
    Ok(0)
}

fn run_tier3(common: &Common, timeout: Option<f64>) -> Outcome {
    let mut suite = suite(common.seed)?;
    let manifest = read_manifest(common)?.unwrap_or_else(|| suite.manifest.clone());
    let mut bindings: Vec<AgentBinding> = Vec::new();
    for r in read_records(common)? {
        match r {
            Record::Binding(b) => bindings.push(b),
            Record::Task(t) => {
                if let Some(best) = t.best_kernel {
                    harness(suite.graph.set_best_kernel(&t.task_id, best))?;
                }
            }
            _ => {}
        }
    }
    if bindings.is_empty() {
        return Err(usage_error("input holds no binding records".into()));
    }
    let h = harness_for(suite, timeout)?;
    let cards: Vec<ScoreCard> = harness(h.run_eval_sweep(&bindings, &manifest))?.into_values().collect();
    emit(common, || format::scorecards_to_string(&cards), || report::emit_leaderboard(&cards))?;
    Ok(exit_for(&cards))
}

fn capture(common: &Common) -> Outcome {
    let suite = suite(common.seed)?;
    let bundles: Vec<CaptureBundle> = suite.bundles.into_values().collect();
    emit(
        common,
        || format::capture_to_string(&bundles),
        || {
            let mut t = String::from("bundle,item,source,scenarios\n");
            for b in &bundles {
                t.push_str(&format!("{},{},{},{}\n", b.bundle_id, b.item_id, b.source.as_str(), b.scenarios.len()));
            }
            t
        },
    )?;
    Ok(0)
}

fn replay(common: &Common) -> Outcome {
    let suite = suite(common.seed)?;
    let bundles = if common.input.is_empty() { suite.bundles.values().cloned().collect() } else { read_bundles(common)? };
    let h = harness_for(suite, None)?;
    let mut checks = Vec::new();
    for b in &bundles {
        checks.extend(harness(h.verify_bundle(b))?);
    }
    emit(
        common,
        || records_text(checks.iter().cloned().map(Record::Replay).collect()),
        || {
            let mut t = String::from("bundle,scenario,bit_exact,d\n");
            for c in &checks {
                t.push_str(&format!("{},{},{},{:.3}\n", c.bundle_id, c.scenario_id, c.bit_exact, c.d));
            }
            t
        },
    )?;
    Ok(u8::from(checks.iter().any(|c| c.d != 0.0)))
}

fn allreduce(common: &Common, candidate: &str, count: usize, ranks: usize, len: usize) -> Outcome {
    if ranks < 2 || len < ranks {
        return Err(usage_error(format!("need at least 2 ranks and a vector no shorter than the rank count (got {ranks} ranks, length {len})")));
    }
    let manifest = match read_manifest(common)? {
        Some(m) => m,
        None => suite(common.seed)?.manifest,
    };
    let th = manifest.threshold("allreduce").ok_or_else(|| usage_error("manifest has no `allreduce` item".into()))?;
    let tol = manifest.tolerance_for(fk_core::Dtype::Fp32);
    let scenarios: Vec<AllreduceScenario> = (0..count)
        .map(|i| AllreduceScenario {
            scenario_id: format!("r{i}"),
            inputs: allreduce_inputs(common.seed.wrapping_add(i as u64), ranks, len),
        })
        .collect();
    let program = harness(WorkerProgram::candidate(candidate))?;
    let outcomes = harness(allreduce_check(&launcher()?, &program, &scenarios, &tol, th.g))?;
    emit(
        common,
        || records_text(outcomes.iter().cloned().map(Record::Collective).collect()),
        || {
            let mut t = String::from("scenario,status,pass,d\n");
            for o in &outcomes {
                t.push_str(&format!("{},{},{},{:.3}\n", o.scenario_id, o.status, o.pass, o.d));
            }
            t
        },
    )?;
    Ok(u8::from(outcomes.iter().any(|o| !o.pass)))
}

fn routing(common: &Common, top: usize, tokens: usize) -> Outcome {
    let loads: Vec<ExpertLoad> = if common.input.is_empty() {
        let gate = ToyGate::new(common.seed);
        [ToySource::RandomTensor, ToySource::RandomToken, ToySource::Structured]
            .into_iter()
            .map(|s| gate.load(s, tokens, common.seed.wrapping_add(1)))
            .collect()
    } else {
        read_records(common)?.into_iter().filter_map(|r| if let Record::Load(l) = r { Some(l) } else { None }).collect()
    };
    if loads.is_empty() {
        return Err(usage_error("input holds no load records".into()));
    }
    if let Some(l) = loads.iter().find(|l| top == 0 || top > l.num_experts) {
        return Err(usage_error(format!("--top {top} must be between 1 and {} experts", l.num_experts)));
    }
    emit(
        common,
        || records_text(loads.iter().cloned().map(Record::Load).collect()),
        || report::routing_table(&loads, top),
    )?;
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Calibrate { common, tau } => calibrate(&common, tau),
        Command::Score { common } => score(&common),
        Command::Sweep { common, scales, agent } => sweep(&common, &scales, agent.as_deref()),
        Command::Bootstrap { common, replicates, level } => bootstrap(&common, replicates, level),
        Command::Gap { common, imputed, agent } => gap(&common, imputed, agent.as_deref()),
        Command::Leaderboard { common } => leaderboard(&common),
        Command::RunTier1 { common, item, candidate, agent, timeout } => {
            run_tier1(&common, &item, &candidate, &agent, timeout)
        }
        Command::RunTier2 { common, task } => run_tier2(&common, &task),
        Command::RunTier3 { common, timeout } => run_tier3(&common, timeout),
        Command::Capture { common } => capture(&common),
        Command::Replay { common } => replay(&common),
        Command::AllreduceCheck { common, candidate, scenarios, ranks, len } => {
            allreduce(&common, &candidate, scenarios, ranks, len)
        }
        Command::Routing { common, top, tokens } => routing(&common, top, tokens),
        Command::Worker => {
            let code = fk_core::harness::worker::serve_stdio();
            Ok(u8::try_from(code).unwrap_or(3))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
