//! End-to-end checks of the binary: exit codes, report artifacts, and
//! rerun reproducibility, all on reduced-scale configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use langevinmix::report::ExperimentReport;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_langevinmix")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lmx_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary spawns")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const LLN_SMALL: &str = r#"{
    "model": {"kind": "linear", "d": 1, "data_bound": 1.0},
    "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
    "chain": {"lambda": 0.5, "theta0": [0.0], "horizon": 30000, "seed": 41},
    "experiment": {"name": "lln"}
}"#;

const COUPLING_SMALL: &str = r#"{
    "model": {"kind": "linear", "d": 1, "data_bound": 1.0},
    "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
    "chain": {"lambda": 0.25, "theta0": [0.0], "horizon": 160, "replicas": 500, "seed": 23},
    "experiment": {
        "name": "coupling",
        "radius": 0.5,
        "horizons": [15, 30, 60, 100, 160],
        "partner": {"law": "point", "theta": [2.0]},
        "fit_r2_gate": 0.9
    }
}"#;

#[test]
fn validate_passes_on_a_certified_config() {
    let dir = scratch("validate_ok");
    let cfg = write_config(
        &dir,
        "ok.json",
        r#"{
            "model": {"kind": "linear", "d": 1, "data_bound": 1.0},
            "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
            "chain": {"lambda": 0.25, "theta0": [0.0], "horizon": 1, "seed": 5},
            "experiment": {"name": "lln"}
        }"#,
    );
    let out_dir = dir.join("out");
    let out = run(&["validate", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("PASS"), "stdout: {}", stdout(&out));
    let report = ExperimentReport::read_json(out_dir.join("validate_report.json")).unwrap();
    assert!(report.pass);
    assert_eq!(report.experiment, "validate");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validate_flags_step_sizes_beyond_the_certified_range() {
    let dir = scratch("validate_range");
    let cfg = write_config(
        &dir,
        "hot.json",
        r#"{
            "model": {"kind": "linear", "d": 1, "data_bound": 1.0},
            "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
            "chain": {"lambda": 0.7, "theta0": [0.0], "horizon": 1, "seed": 5},
            "experiment": {"name": "lln"}
        }"#,
    );
    let out_dir = dir.join("out");
    let out = run(&["validate", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1, "a failed validator is a check failure, not a schema error");
    let text = stdout(&out);
    assert!(
        text.contains("exceeds delta/K^2"),
        "the verdict must name the violated step-size hypothesis: {text}"
    );
    // The report is written even though the verdict is FAIL.
    let report = ExperimentReport::read_json(out_dir.join("validate_report.json")).unwrap();
    assert!(!report.pass);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn schema_violations_exit_2() {
    let dir = scratch("schema");
    let cases: Vec<(String, &str)> = vec![
        ("not json at all {".into(), "truncated.json"),
        (r#"{"model": {"kind": "linear", "d": 1, "data_bound": 1.0, "turbo": true},
            "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
            "chain": {"lambda": 0.5, "theta0": [0.0], "horizon": 10, "seed": 1},
            "experiment": {"name": "lln"}}"#
            .into(), "unknown_field.json"),
        (LLN_SMALL.replace("\"d\": 1", "\"d\": 0"), "zero_d.json"),
        (LLN_SMALL
            .replace("\"horizon\": 30000", "\"horizon\": 30000, \"replicas\": 0")
            .replace("\"name\": \"lln\"", "\"name\": \"clt\""), "zero_replicas.json"),
    ];
    for (body, name) in &cases {
        let cfg = write_config(&dir, name, body);
        let out = run(&["run", "-c", cfg.to_str().unwrap()]);
        assert_eq!(exit_code(&out), 2, "{name} must be a schema error, stderr: {}", stderr(&out));
        assert!(!stderr(&out).is_empty(), "{name} must explain itself on stderr");
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn usage_errors_exit_2() {
    let no_config = run(&["lln"]);
    assert_eq!(exit_code(&no_config), 2);
    let unknown = run(&["meditate", "-c", "x.json"]);
    assert_eq!(exit_code(&unknown), 2);
    let missing_file = run(&["lln", "-c", "/nonexistent/nowhere.json"]);
    assert_eq!(exit_code(&missing_file), 2);
}

#[test]
fn named_subcommands_reject_mismatched_configs() {
    let dir = scratch("mismatch");
    let cfg = write_config(&dir, "coupling.json", COUPLING_SMALL);
    let out = run(&["lln", "-c", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr(&out).contains("use `run`"),
        "the error should point at the generic dispatcher: {}",
        stderr(&out)
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn run_dispatches_by_config_name() {
    let dir = scratch("dispatch");
    let cfg = write_config(&dir, "coupling.json", COUPLING_SMALL);
    let out_dir = dir.join("out");
    let out = run(&["run", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stdout: {}\nstderr: {}", stdout(&out), stderr(&out));
    assert!(out_dir.join("coupling_report.json").exists());
    assert!(out_dir.join("coupling_curve.csv").exists(), "curve CSV ships with the report");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_reproduce_reports_and_seed_overrides_change_them() {
    let dir = scratch("repro");
    let cfg = write_config(&dir, "lln.json", LLN_SMALL);
    let (a, b, c) = (dir.join("a"), dir.join("b"), dir.join("c"));
    for (out_dir, extra) in [(&a, None), (&b, None), (&c, Some("909"))] {
        let mut args = vec!["lln", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        if let Some(seed) = extra {
            args.extend(["--seed", seed]);
        }
        let out = run(&args);
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    }
    let ra = ExperimentReport::read_json(a.join("lln_report.json")).unwrap();
    let rb = ExperimentReport::read_json(b.join("lln_report.json")).unwrap();
    let rc = ExperimentReport::read_json(c.join("lln_report.json")).unwrap();
    assert_eq!(
        ra.canonical_bytes(),
        rb.canonical_bytes(),
        "same config, same seed: reports must agree outside the volatile block"
    );
    assert_eq!(ra.digest(), rb.digest());
    assert_eq!(rc.master_seed, 909, "the --seed flag replaces the config seed");
    assert_ne!(ra.digest(), rc.digest(), "a different seed must change the estimates");
    assert_eq!(ra.config_digest, rc.config_digest, "the config digest pins the file, not the seed");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn constants_prints_the_same_bundle_on_every_run() {
    let dir = scratch("constants");
    let cfg = write_config(
        &dir,
        "constants.json",
        r#"{
            "model": {"kind": "linear", "d": 1, "data_bound": 1.0},
            "stream": {"kind": "iid_uniform", "m": 1, "bound": 1.0},
            "chain": {"lambda": 0.25, "theta0": [0.0], "horizon": 1, "seed": 8},
            "experiment": {"name": "constants", "lambda_sweep": [0.1, 0.25]}
        }"#,
    );
    let out_dir = dir.join("out");
    let first = run(&["constants", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    let second =
        run(&["constants", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    assert_eq!(stdout(&first), stdout(&second), "the printed bundle is deterministic");
    assert!(stdout(&first).contains("\"N\": 13"), "stdout: {}", stdout(&first));
    assert!(out_dir.join("constants_sweep.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn failed_checks_exit_1_but_still_write_the_report() {
    let dir = scratch("red");
    let cfg = write_config(
        &dir,
        "strict.json",
        &LLN_SMALL.replace(
            r#"{"name": "lln"}"#,
            r#"{"name": "lln", "second_moment_rel_gate": 1e-9}"#,
        ),
    );
    let out_dir = dir.join("out");
    let out = run(&["lln", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stdout(&out).contains("[FAIL] lln_second_moment"), "stdout: {}", stdout(&out));
    let report = ExperimentReport::read_json(out_dir.join("lln_report.json")).unwrap();
    assert!(!report.pass, "an impossible tolerance must be reported as a failure");
    std::fs::remove_dir_all(&dir).unwrap();
}
