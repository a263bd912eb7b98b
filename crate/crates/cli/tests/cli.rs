use std::fs;
use std::path::{Path, PathBuf};

use ptb_cli::cli_main;

fn experiments(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(name).to_string_lossy().into_owned()
}

fn ptb(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli_main(std::iter::once("ptb").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn out_dir(tmp: &tempfile::TempDir, sub: &str) -> PathBuf {
    tmp.path().join(sub)
}

#[test]
fn validate_ok() {
    let (code, out, _) = ptb(&["validate", "--config", &experiments("minip_lossless.yaml")]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "ok");
}

#[test]
fn validate_reports_paths() {
    let (code, _, err) = ptb(&["validate", "--config", &experiments("invalid/bad_loss_rate.yaml")]);
    assert_eq!(code, 2);
    assert!(err.contains("network.params.loss_rate"), "{err}");
}

#[test]
fn run_bug_ack_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "ack");
    let (code, out, _) =
        ptb(&["run", "--config", &experiments("minip_bug_ack.yaml"), "--output", dir.to_str().unwrap()]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("ack-matches-seq"));
    assert!(dir.join("result.json").exists());
}

#[test]
fn plugins_list_protocols() {
    let (code, out, _) = ptb(&["plugins", "list", "--kind", "Protocol"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines, ["Protocol minip 0.1.0", "Protocol tinyq 0.1.0"]);
    let (code, _, err) = ptb(&["plugins", "list", "--kind", "Gadget"]);
    assert_eq!(code, 2);
    assert!(err.contains("Gadget"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ptb(&["frobnicate"]).0, 2);
    assert_eq!(ptb(&["run"]).0, 2);
    assert_eq!(ptb(&["run", "--config", "x", "--bogus"]).0, 2);
    assert_eq!(ptb(&["--help"]).0, 0);
}

#[test]
fn check_recorded_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "lossy");
    let (code, ..) = ptb(&["run", "--config", &experiments("minip_lossy.yaml"), "--output", dir.to_str().unwrap()]);
    let trace = dir.join("trace_session_0.jsonl");
    let (check_code, out, _) = ptb(&["check", "--spec", "minip", "--trace", trace.to_str().unwrap()]);
    assert_eq!(check_code, code, "{out}");

    let dir = out_dir(&tmp, "version");
    ptb(&["run", "--config", &experiments("minip_bug_version.yaml"), "--output", dir.to_str().unwrap()]);
    let trace = dir.join("trace_session_0.jsonl");
    let (code, out, _) = ptb(&["check", "--spec", "minip", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("version-echo"));
    let spec_file = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/minip.yaml");
    let (code, out, _) = ptb(&["check", "--spec", spec_file.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(out.contains("version-echo"));
}

#[test]
fn check_missing_trace_is_runtime_error() {
    assert_eq!(ptb(&["check", "--spec", "minip", "--trace", "/nonexistent/trace.jsonl"]).0, 3);
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path().join("t.jsonl");
    fs::write(&t, "").unwrap();
    assert_eq!(ptb(&["check", "--spec", "nosuch", "--trace", t.to_str().unwrap()]).0, 2);
}

#[test]
fn seed_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "s");
    let (_, out, _) =
        ptb(&["run", "--config", &experiments("minip_lossy.yaml"), "--seed", "5", "--output", dir.to_str().unwrap()]);
    assert!(out.contains("seed=5"), "{out}");
}

#[test]
fn spec_subcommand_prints_yaml() {
    let (code, out, _) = ptb(&["spec", "tinyq"]);
    assert_eq!(code, 0);
    let shipped = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/tinyq.yaml")).unwrap();
    assert_eq!(out, shipped);
}
