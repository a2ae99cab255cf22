//! End-to-end checks of the installed binary: exit codes, environment
//! fallbacks and file exports.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timesplit"))
}

fn model(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn validate_cascade_succeeds_with_counts() {
    let out = bin()
        .args(["validate", "--model", &model("cascade.dft")])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("48 locations"), "{stdout}");
    assert!(stdout.contains("3 target locations"), "{stdout}");
}

#[test]
fn missing_model_exits_2() {
    let out = bin()
        .args([
            "estimate",
            "--model",
            "nope.dft",
            "--bound",
            "10",
            "--runs",
            "10",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dirac_distribution_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dirac.dft");
    std::fs::write(
        &path,
        "toplevel \"A\"; \"A\" fail~uniform(2,2) repair~uniform(0,1);",
    )
    .unwrap();
    let out = bin()
        .args(["validate", "--model", &path.display().to_string()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("Dirac"), "{stderr}");
}

#[test]
fn cyclic_dft_fails_at_parse_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cycle.dft");
    std::fs::write(&path, "toplevel \"X\"; \"X\" pand \"X\";").unwrap();
    let out = bin()
        .args(["validate", "--model", &path.display().to_string()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("cycle"));
}

#[test]
fn relaxed_toy_cmc_reports_nonzero_estimate() {
    let out = bin()
        .args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--method",
            "cmc",
            "--runs",
            "1000",
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("JSON report on stdout");
    assert!(report["estimate"].as_f64().unwrap() > 0.0);
    assert_eq!(report["config"]["bound"], 22.0);
}

#[test]
fn env_seed_is_the_fallback() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = bin();
        cmd.args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--method",
            "cmc",
            "--runs",
            "50",
        ]);
        cmd.env_remove("TIMESPLIT_SEED");
        if let Some(e) = env {
            cmd.env("TIMESPLIT_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, None), 0);
    assert_eq!(run(Some("17"), None), 17);
    assert_eq!(run(Some("17"), Some("4")), 4);
}

#[test]
fn budget_diagnostic_exits_3() {
    // a single replication cannot produce an interval
    let out = bin()
        .args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--method",
            "res-time",
            "--depth",
            "3",
            "--effort",
            "16",
            "--runs",
            "1",
            "--seed",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["replications"], 1);
    assert_eq!(report["half_width"], "inf");
}

#[test]
fn conflicting_budgets_exit_2() {
    let out = bin()
        .args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--runs",
            "10",
            "--seconds",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_scg_and_trace_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("scg");
    let trace = dir.path().join("trace.csv");
    let out = bin()
        .args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--method",
            "res-time",
            "--depth",
            "5",
            "--effort",
            "8",
            "--runs",
            "200",
            "--seed",
            "2",
            "--export-scg",
            &prefix.display().to_string(),
            "--trace",
            &trace.display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(scg["depth"], 5);
    assert!(prefix.with_extension("dot").exists());
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = trace_text.lines();
    assert_eq!(lines.next(), Some("step,age,timer,location,importance"));
    assert!(lines.next().is_some());
}

#[test]
fn seconds_budget_is_accepted() {
    let out = bin()
        .args([
            "estimate",
            "--model",
            &model("toy_ups_ac.dft"),
            "--bound",
            "22",
            "--method",
            "cmc",
            "--seconds",
            "0.2",
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["runs"].as_u64().unwrap() > 0);
}

#[test]
fn analyze_depth_zero_has_targets_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "analyze",
            "--model",
            &model("toy_ups_ac.dft"),
            "--depth",
            "0",
            "--out-dir",
            &dir.path().display().to_string(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let scg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scg.json")).unwrap())
            .unwrap();
    let classes = scg["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 1);
    assert_eq!(classes[0]["omega"], 0);
}
