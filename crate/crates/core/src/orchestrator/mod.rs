//! Experiment runner: validate, instantiate plugins, run every test
//! iteration in its own simulation, and write traces and summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{
    flatten, render_template, serialize_config, template_context, validate_config, ConfigError, ExperimentConfig,
    Issue, ServiceConfig, TestConfig, ValidationReport,
};
use crate::fuzz::{fuzz_session, Finding};
use crate::netsim::{trace_io, Action, Bandwidth, Duration, Handler, HandlerError, Input, NetworkParams, Trace};
use crate::plugin::{
    ExecutionEnv, Factory, IutContext, PluginKind, PluginRegistry, ProtocolContext, SimFactory, TesterSetup,
};
use crate::session::{run_session, Driver, Endpoint, SessionSetup};
use crate::spec::{compile_spec, CompiledSpec, Verdict, PROVENANCE};

mod offline;
pub use offline::{recorded_context, spec_for_trace};

pub const RESULT_FILE: &str = "result.json";
pub const REPORT_FILE: &str = "validation_report.json";
pub const RESOLVED_FILE: &str = "resolved_config.yaml";
pub const OUTPUT_ENV: &str = "PTB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ExitStatus {
    AllPass,
    SomeFail,
    ConfigError,
    RuntimeError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::AllPass => 0,
            ExitStatus::SomeFail => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::RuntimeError => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub test_name: String,
    pub iteration: u64,
    pub seed_used: u64,
    pub verdict: Verdict,
    pub trace_path: PathBuf,
    pub metrics: Option<Value>,
    pub tester_steps: u64,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: String,
    /// Wall-clock start, informational only.
    pub started: String,
    pub outcomes: Vec<TestOutcome>,
    pub resolved_config_path: Option<PathBuf>,
    pub exit_status: ExitStatus,
    pub report: ValidationReport,
    /// Runtime failures, each naming the service or file involved.
    pub errors: Vec<String>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub test_filter: Option<String>,
    /// Worker threads for independent iterations; 0 or 1 runs sequentially.
    pub parallel: usize,
}

/// `--output`, then `PTB_OUTPUT_DIR`, then the config's `output_dir`.
pub fn resolve_output_dir(cli: Option<&Path>, env: Option<&str>, config_dir: Option<&str>, name: &str) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| env.filter(|e| !e.is_empty()).map(PathBuf::from))
        .or_else(|| config_dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("./results/{name}")))
}

pub fn seed_used(experiment_seed: u64, seed_offset: u64, iteration: u64) -> u64 {
    experiment_seed ^ seed_offset ^ iteration
}

pub fn trace_file_name(test: &str, iteration: u64) -> String {
    format!("trace_{test}_{iteration}.jsonl")
}

/// Writes the JSON-lines encoding. Equal traces give equal bytes.
pub fn write_trace(trace: &Trace, path: &Path) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, trace_io::to_jsonl(trace))
}

pub fn read_trace(path: &Path) -> io::Result<Trace> {
    let text = fs::read_to_string(path)?;
    trace_io::from_jsonl(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn io_err(path: &Path, e: io::Error) -> String {
    format!("{}: {e}", path.display())
}

/// Writes a report for a config that failed to parse or validate. Nothing
/// else is written.
pub fn write_report(dir: &Path, report: &ValidationReport) -> Result<PathBuf, String> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(REPORT_FILE);
    fs::write(&path, report.to_json()).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn report_for(err: &ConfigError) -> ValidationReport {
    let message = match err {
        ConfigError::Syntax(e) => e.to_string(),
        ConfigError::Missing { .. } => "missing mandatory key".to_string(),
        ConfigError::Invalid { message, .. } => message.clone(),
        ConfigError::DuplicateService { name, .. } => format!("duplicate service name `{name}`"),
    };
    ValidationReport { ok: false, errors: vec![Issue { path: err.path().to_string(), message }], warnings: vec![] }
}

fn network_json(p: &NetworkParams) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("network.latency".to_string(), p.latency_base.to_string()),
        ("network.jitter".to_string(), p.jitter.to_string()),
        (
            "network.bandwidth".to_string(),
            match p.bandwidth {
                Bandwidth::Unlimited => "unlimited".to_string(),
                Bandwidth::BitsPerSec(b) => b.to_string(),
            },
        ),
        ("network.loss_rate".to_string(), format!("{:?}", p.loss_rate)),
    ])
}

/// Everything resolved once per test and shared by its iterations.
struct Prepared<'a> {
    test: &'a TestConfig,
    tester_svc: &'a ServiceConfig,
    iut_svc: &'a ServiceConfig,
    compiled: Arc<CompiledSpec>,
    tester: TesterSetup,
    iut_factory: crate::plugin::IutFactory,
    commands: [String; 2],
}

struct Unit {
    prep: usize,
    iteration: u64,
}

/// Stand-in endpoint for an IUT whose factory failed on a re-run; every
/// input fails, which the simulator reports as a crash.
struct Unavailable(String);

impl Handler for Unavailable {
    fn handle(&mut self, _now: Duration, _input: Input<'_>) -> Result<Vec<Action>, HandlerError> {
        Err(HandlerError(self.0.clone()))
    }
}

fn resolve(registry: &PluginRegistry, kind: PluginKind, name: &str, service: &str) -> Result<Factory, String> {
    registry.resolve(kind, name).map(|d| d.factory.clone()).map_err(|e| format!("service {service}: {e}"))
}

fn prepare<'a>(
    config: &'a ExperimentConfig,
    test: &'a TestConfig,
    registry: &PluginRegistry,
    network: &NetworkParams,
) -> Result<Prepared<'a>, String> {
    let tester_svc = config.service(&test.tester_service).ok_or("tester service vanished after validation")?;
    let iut_svc = config.service(&test.target_service).ok_or("target service vanished after validation")?;
    let Factory::Protocol(pf) = resolve(registry, PluginKind::Protocol, &tester_svc.protocol.name, &tester_svc.name)?
    else {
        return Err(format!("service {}: protocol plugin has the wrong kind", tester_svc.name));
    };
    let spec = pf(&ProtocolContext { params: &tester_svc.protocol.params, network })
        .map_err(|e| format!("service {}: protocol {}: {e}", tester_svc.name, tester_svc.protocol.name))?;
    let compiled = compile_spec(spec).map_err(|e| format!("service {}: {e}", tester_svc.name))?;
    let Factory::Tester(tf) = resolve(registry, PluginKind::Tester, &tester_svc.implementation.name, &tester_svc.name)?
    else {
        return Err(format!("service {}: implementation has the wrong kind", tester_svc.name));
    };
    let tester = tf(&tester_svc.implementation.params).map_err(|e| format!("service {}: {e}", tester_svc.name))?;
    if !compiled.has_role(tester.role()) {
        return Err(format!("service {}: protocol has no role `{}`", tester_svc.name, tester.role()));
    }
    let Factory::Iut(iut_factory) = resolve(registry, PluginKind::Iut, &iut_svc.implementation.name, &iut_svc.name)?
    else {
        return Err(format!("service {}: implementation has the wrong kind", iut_svc.name));
    };
    let render = |svc: &ServiceConfig| {
        render_template(&svc.command_template, &template_context(config, svc))
            .map_err(|e| format!("service {}: {e}", svc.name))
    };
    let commands = [render(tester_svc)?, render(iut_svc)?];
    Ok(Prepared { test, tester_svc, iut_svc, compiled: Arc::new(compiled), tester, iut_factory, commands })
}

fn run_unit(
    config: &ExperimentConfig,
    prep: &Prepared<'_>,
    iteration: u64,
    sim: &SimFactory,
    exec: &dyn ExecutionEnv,
    out_dir: &Path,
) -> Result<TestOutcome, String> {
    let seed = seed_used(config.seed, prep.test.seed_offset, iteration);
    let mut network = sim.params.clone();
    network.seed = seed;
    let iut_ctx = IutContext {
        service: &prep.iut_svc.name,
        params: &prep.iut_svc.implementation.params,
        protocol_params: &prep.iut_svc.protocol.params,
        seed,
    };
    let make_iut = || (prep.iut_factory)(&iut_ctx).map_err(|e| format!("service {}: {e}", prep.iut_svc.name));
    let first = make_iut()?;
    if !prep.compiled.has_role(&first.role) {
        return Err(format!("service {}: protocol has no role `{}`", prep.iut_svc.name, first.role));
    }

    let mut provenance = Vec::new();
    for (svc, role, service_role, command) in [
        (prep.tester_svc, prep.tester.role().to_string(), prep.tester.service_role(), &prep.commands[0]),
        (prep.iut_svc, first.role.clone(), "iut", &prep.commands[1]),
    ] {
        provenance.push(BTreeMap::from([
            (PROVENANCE.to_string(), "service".to_string()),
            ("service".to_string(), svc.name.clone()),
            ("service_role".to_string(), service_role.to_string()),
            ("protocol_role".to_string(), role),
            ("implementation".to_string(), svc.implementation.name.clone()),
            ("command".to_string(), command.clone()),
        ]));
    }
    let mut exp = network_json(&network);
    exp.insert(PROVENANCE.to_string(), "experiment".to_string());
    exp.insert("experiment".to_string(), config.name.clone());
    exp.insert("test".to_string(), prep.test.test_name.clone());
    exp.insert("seed".to_string(), seed.to_string());
    exp.insert("protocol".to_string(), prep.tester_svc.protocol.name.clone());
    for (k, v) in flatten(&prep.tester_svc.protocol.params) {
        exp.insert(format!("protocol.{k}"), v.to_string());
    }
    provenance.push(exp);

    let setup = SessionSetup {
        compiled: prep.compiled.clone(),
        network,
        experiment: config.name.clone(),
        tester: Endpoint { service: prep.tester_svc.name.clone(), role: prep.tester.role().to_string() },
        iut: Endpoint { service: prep.iut_svc.name.clone(), role: first.role.clone() },
        horizon: prep.test.timeout,
        step_budget: crate::netsim::DEFAULT_STEP_BUDGET,
        provenance,
    };
    let trace_name = trace_file_name(&prep.test.test_name, iteration);
    let trace_path = out_dir.join(&trace_name);
    let (verdict, trace, steps, findings) = match &prep.tester {
        TesterSetup::Model { policy, .. } => {
            let out = run_session(&setup, &Driver::Model { policy: *policy }, first.handler)
                .map_err(|e| format!("test {}: {e}", prep.test.test_name))?;
            (out.verdict, out.trace, out.tester_steps, vec![])
        }
        TesterSetup::Fuzzer(fc) => {
            let factory = || -> Box<dyn Handler> {
                match make_iut() {
                    Ok(i) => i.handler,
                    Err(e) => Box::new(Unavailable(e)),
                }
            };
            let run = fuzz_session(&setup, fc, &factory).map_err(|e| format!("test {}: {e}", prep.test.test_name))?;
            let verdict = match run.findings.first() {
                Some(f) => Verdict::Fail {
                    property: f.property.clone(),
                    event_seq: f.event_seq,
                    trace: run.outcome.trace.clone(),
                },
                None => Verdict::Pass,
            };
            (verdict, run.outcome.trace.clone(), run.outcome.tester_steps, run.findings)
        }
    };
    write_trace(&trace, &trace_path).map_err(|e| io_err(&trace_path, e))?;
    for f in &findings {
        let path = out_dir.join(format!("finding_{}_{}.json", prep.test.test_name, f.id));
        let text = serde_json::to_string_pretty(&f.to_json(&trace_name)).expect("finding serializes");
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(TestOutcome {
        test_name: prep.test.test_name.clone(),
        iteration,
        seed_used: seed,
        verdict,
        trace_path,
        metrics: exec.metrics(&trace),
        tester_steps: steps,
        findings,
    })
}

fn outcome_json(o: &TestOutcome) -> Value {
    let mut v = json!({
        "test_name": o.test_name,
        "iteration": o.iteration,
        "seed_used": o.seed_used,
        "verdict": o.verdict.label(),
    });
    match &o.verdict {
        Verdict::Fail { property, event_seq, .. } => {
            v["property"] = json!(property);
            v["event_seq"] = json!(event_seq);
        }
        Verdict::Inconclusive { reason } => v["reason"] = json!(reason),
        Verdict::Pass => {}
    }
    v["trace_file"] = json!(o.trace_path.file_name().map(|n| n.to_string_lossy().into_owned()));
    v["tester_steps"] = json!(o.tester_steps);
    if !o.findings.is_empty() {
        v["findings"] = json!(o.findings.iter().map(|f| f.id.clone()).collect::<Vec<_>>());
    }
    if let Some(m) = &o.metrics {
        v["metrics"] = m.clone();
    }
    v
}

impl ExperimentResult {
    /// The `result.json` document.
    pub fn to_json(&self) -> Value {
        json!({
            "experiment": self.experiment,
            "started": self.started,
            "exit_status": self.exit_status,
            "resolved_config": self.resolved_config_path.as_ref().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
            "outcomes": self.outcomes.iter().map(outcome_json).collect::<Vec<_>>(),
            "errors": self.errors,
        })
    }
}

/// Full pipeline. Validation failures stop before any simulation is built
/// and leave only the validation report on disk.
pub fn run_experiment(config: &ExperimentConfig, registry: &PluginRegistry, options: &RunOptions) -> ExperimentResult {
    let started = chrono::Utc::now().to_rfc3339();
    let mut config = config.clone();
    if let Some(seed) = options.seed {
        config.seed = seed;
    }
    let out_dir = options.output_dir.clone().unwrap_or_else(|| PathBuf::from(&config.output_dir));
    let mut result = ExperimentResult {
        experiment: config.name.clone(),
        started,
        outcomes: vec![],
        resolved_config_path: None,
        exit_status: ExitStatus::ConfigError,
        report: ValidationReport::default(),
        errors: vec![],
        output_dir: out_dir.clone(),
    };
    let mut validation = validate_config(&config, registry);
    if let Some(name) = &options.test_filter {
        if !validation.resolved.tests.iter().any(|t| &t.test_name == name) {
            validation.report.errors.push(Issue { path: "tests".into(), message: format!("no test named `{name}`") });
            validation.report.ok = false;
        }
    }
    result.report = validation.report.clone();
    if !validation.report.ok {
        if let Err(e) = write_report(&out_dir, &validation.report) {
            result.errors.push(e);
        }
        return result;
    }
    let resolved = validation.resolved;

    result.exit_status = ExitStatus::RuntimeError;
    if let Err(e) = fs::create_dir_all(&out_dir) {
        result.errors.push(io_err(&out_dir, e));
        return result;
    }
    let resolved_path = out_dir.join(RESOLVED_FILE);
    match fs::write(&resolved_path, serialize_config(&resolved)) {
        Ok(()) => result.resolved_config_path = Some(resolved_path),
        Err(e) => result.errors.push(io_err(&resolved_path, e)),
    }

    let env = (|| {
        let Factory::NetworkEnvironment(nf) =
            resolve(registry, PluginKind::NetworkEnvironment, &resolved.network.name, "network")?
        else {
            return Err("network: plugin has the wrong kind".to_string());
        };
        let sim = nf(&resolved.network.params).map_err(|e| format!("network: {e}"))?;
        let Factory::ExecutionEnvironment(ef) =
            resolve(registry, PluginKind::ExecutionEnvironment, &resolved.execution.name, "execution")?
        else {
            return Err("execution: plugin has the wrong kind".to_string());
        };
        let exec = ef(&resolved.execution.params).map_err(|e| format!("execution: {e}"))?;
        Ok((sim, exec))
    })();
    let (sim, exec) = match env {
        Ok(v) => v,
        Err(e) => {
            result.errors.push(e);
            finish(&mut result, &out_dir);
            return result;
        }
    };

    let mut prepared = Vec::new();
    for test in resolved.tests.iter().filter(|t| options.test_filter.as_ref().is_none_or(|n| *n == t.test_name)) {
        match prepare(&resolved, test, registry, &sim.params) {
            Ok(p) => prepared.push(p),
            Err(e) => result.errors.push(e),
        }
    }
    let units: Vec<Unit> = prepared
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.test.iterations).map(move |iteration| Unit { prep: i, iteration }))
        .collect();
    let run = |u: &Unit| run_unit(&resolved, &prepared[u.prep], u.iteration, &sim, exec.as_ref(), &out_dir);
    let outcomes: Vec<Result<TestOutcome, String>> = if options.parallel > 1 {
        match rayon::ThreadPoolBuilder::new().num_threads(options.parallel).build() {
            Ok(pool) => pool.install(|| units.par_iter().map(run).collect()),
            Err(e) => {
                result.errors.push(format!("thread pool: {e}"));
                units.iter().map(run).collect()
            }
        }
    } else {
        units.iter().map(run).collect()
    };
    for o in outcomes {
        match o {
            Ok(o) => result.outcomes.push(o),
            Err(e) => result.errors.push(e),
        }
    }
    finish(&mut result, &out_dir);
    result
}

fn finish(result: &mut ExperimentResult, out_dir: &Path) {
    result.exit_status = if !result.errors.is_empty() {
        ExitStatus::RuntimeError
    } else if result.outcomes.iter().all(|o| o.verdict.is_pass()) {
        ExitStatus::AllPass
    } else {
        ExitStatus::SomeFail
    };
    let path = out_dir.join(RESULT_FILE);
    let text = serde_json::to_string_pretty(&result.to_json()).expect("result serializes");
    if let Err(e) = fs::write(&path, text) {
        result.errors.push(io_err(&path, e));
        result.exit_status = ExitStatus::RuntimeError;
    }
}
