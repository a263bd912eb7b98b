//! Command-line front end. `cli_main` is the whole program; `main.rs` only
//! forwards the process arguments and exit code.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ptb_core::config::{parse_config, validate_config, ConfigError, ValidationReport};
use ptb_core::orchestrator::{
    read_trace, report_for, resolve_output_dir, run_experiment, spec_for_trace, write_report, ExitStatus, RunOptions,
    OUTPUT_ENV,
};
use ptb_core::plugin::builtin::default_registry;
use ptb_core::plugin::{Factory, PluginKind, PluginRegistry, ProtocolContext};
use ptb_core::spec::{check_trace, spec_to_yaml};
use ptb_core::{NetworkParams, Verdict};

#[derive(Debug, Parser)]
#[command(name = "ptb", version, about = "Deterministic protocol test bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every test of an experiment and write traces and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to $PTB_OUTPUT_DIR, then the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replaces the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only the named test.
        #[arg(long)]
        test: Option<String>,
        /// Worker threads for independent iterations.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Validate a configuration and print the report.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Inspect the plugin catalog.
    Plugins {
        #[command(subcommand)]
        action: PluginsAction,
    },
    /// Check a recorded trace offline.
    Check {
        /// Protocol plugin name, or a specification file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Print a protocol's specification with default parameters.
    Spec { protocol: String },
}

#[derive(Debug, Subcommand)]
enum PluginsAction {
    List {
        #[arg(long)]
        kind: Option<String>,
    },
}

/// Runs the program with `args` (including the program name) and returns
/// the exit code.
pub fn cli_main<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let registry = default_registry();
    match cli.command {
        Command::Run { config, output, seed, test, parallel } => {
            let opts = RunOptions { output_dir: output, seed, test_filter: test, parallel };
            run(&registry, &config, opts, out, err)
        }
        Command::Validate { config } => validate(&registry, &config, out, err),
        Command::Plugins { action: PluginsAction::List { kind } } => list(&registry, kind.as_deref(), out, err),
        Command::Check { spec, trace } => check(&registry, &spec, &trace, out, err),
        Command::Spec { protocol } => print_spec(&registry, &protocol, out, err),
    }
}

fn load(path: &Path) -> Result<ptb_core::ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid { path: "config".into(), message: format!("{}: {e}", path.display()) })?;
    parse_config(&text)
}

fn print_report(report: &ValidationReport, out: &mut dyn Write) {
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {}: {}", w.path, w.message);
    }
    for e in &report.errors {
        let _ = writeln!(out, "error: {}: {}", e.path, e.message);
    }
    if report.ok {
        let _ = writeln!(out, "ok");
    }
}

fn env_output() -> Option<String> {
    std::env::var(OUTPUT_ENV).ok().filter(|s| !s.is_empty())
}

fn run(registry: &PluginRegistry, path: &Path, mut opts: RunOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let env = env_output();
    let config = match load(path) {
        Ok(c) => c,
        Err(e) => {
            let report = report_for(&e);
            print_report(&report, err);
            // Without a parsed config the only known locations are the flag and the environment.
            if let Some(dir) = opts.output_dir.clone().or(env.map(PathBuf::from)) {
                if let Err(w) = write_report(&dir, &report) {
                    let _ = writeln!(err, "error: {w}");
                }
            }
            return ExitStatus::ConfigError.code();
        }
    };
    opts.output_dir =
        Some(resolve_output_dir(opts.output_dir.as_deref(), env.as_deref(), Some(&config.output_dir), &config.name));
    let result = run_experiment(&config, registry, &opts);
    if result.exit_status == ExitStatus::ConfigError {
        print_report(&result.report, err);
    }
    for o in &result.outcomes {
        let _ = writeln!(out, "{} #{} seed={} {}", o.test_name, o.iteration, o.seed_used, o.verdict);
    }
    for e in &result.errors {
        let _ = writeln!(err, "error: {e}");
    }
    let _ = writeln!(out, "{:?} ({})", result.exit_status, result.output_dir.display());
    result.exit_status.code()
}

fn validate(registry: &PluginRegistry, path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match load(path) {
        Ok(config) => {
            let v = validate_config(&config, registry);
            print_report(&v.report, if v.report.ok { out } else { err });
            if v.report.ok {
                0
            } else {
                2
            }
        }
        Err(e) => {
            print_report(&report_for(&e), err);
            2
        }
    }
}

fn list(registry: &PluginRegistry, kind: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let plugins = match kind {
        None => registry.list_all(),
        Some(k) => match k.parse::<PluginKind>() {
            Ok(k) => registry.list_by_kind(k),
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return 2;
            }
        },
    };
    for p in plugins {
        let _ = writeln!(out, "{} {} {}", p.kind, p.name, p.version);
    }
    0
}

fn check(registry: &PluginRegistry, spec: &str, path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let trace = match read_trace(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return 3;
        }
    };
    let compiled = match spec_for_trace(registry, spec, &trace) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let verdict = check_trace(&compiled, &trace);
    let _ = writeln!(out, "{verdict}");
    match verdict {
        Verdict::Pass => 0,
        _ => 1,
    }
}

fn print_spec(registry: &PluginRegistry, name: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let built = registry.resolve(PluginKind::Protocol, name).map_err(|e| e.to_string()).and_then(|d| {
        let Factory::Protocol(pf) = &d.factory else { unreachable!("resolved by kind") };
        let mut params = Default::default();
        let mut report = ValidationReport::default();
        ptb_core::config::check_params(&mut params, &d.schema, "params", &mut report, &mut Vec::new());
        pf(&ProtocolContext { params: &params, network: &NetworkParams::default() }).map_err(|e| e.to_string())
    });
    match built {
        Ok(spec) => {
            let _ = out.write_all(spec_to_yaml(&spec).as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
