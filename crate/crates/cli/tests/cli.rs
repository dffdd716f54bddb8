//! CLI plumbing: config-file precedence, environment defaults, debug dumps,
//! and output formats.

use std::path::PathBuf;
use std::process::Command;

fn workdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("clreg-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_with_env(args: &[&str], env: &[(&str, &str)]) -> (String, String, bool) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_clreg"));
    cmd.args(args).env_remove("CLREG_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    (
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
        out.status.success(),
    )
}

fn run(args: &[&str]) -> (String, String, bool) {
    run_with_env(args, &[])
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = workdir();
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, r#"{"seed": 5, "trials": 8, "noise": "rademacher"}"#).unwrap();
    let base = ["simulate", "--q", "2", "0", "--d", "8", "--n", "20"];

    let from_config = {
        let mut a = base.to_vec();
        a.extend(["--config", cfg.to_str().unwrap()]);
        run(&a).0
    };
    let explicit = {
        let mut a = base.to_vec();
        a.extend(["--seed", "5", "--trials", "8", "--noise", "rademacher"]);
        run(&a).0
    };
    assert_eq!(from_config, explicit);

    // a flag beats the same setting in the config file
    let overridden = {
        let mut a = base.to_vec();
        a.extend(["--config", cfg.to_str().unwrap(), "--seed", "9"]);
        run(&a).0
    };
    let explicit9 = {
        let mut a = base.to_vec();
        a.extend(["--seed", "9", "--trials", "8", "--noise", "rademacher"]);
        run(&a).0
    };
    assert_eq!(overridden, explicit9);
    assert_ne!(overridden, explicit);

    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"seeds": 5}"#).unwrap();
    let (_, err, ok) = run(&[
        "simulate", "--q", "2", "0", "--d", "8", "--n", "20", "--config",
        bad.to_str().unwrap(),
    ]);
    assert!(!ok && err.contains("bad.json"));
}

#[test]
fn env_thread_cap_matches_flag() {
    let args = [
        "simulate", "--q", "2", "0", "--d", "8", "--n", "20", "--trials", "16", "--seed", "1",
    ];
    let via_env = run_with_env(&args, &[("CLREG_THREADS", "2")]).0;
    let via_flag = {
        let mut a = args.to_vec();
        a.extend(["--threads", "2"]);
        run(&a).0
    };
    assert_eq!(via_env, via_flag);
}

#[test]
fn debug_dumps_have_documented_shapes() {
    let dir = workdir();
    let trials_csv = dir.join("trials.csv");
    let data_csv = dir.join("data.csv");
    let (_, err, ok) = run(&[
        "simulate", "--q", "2", "0", "--d", "4", "--n", "6", "--trials", "3", "--methods",
        "ocl,jl", "--per-trial-csv", trials_csv.to_str().unwrap(), "--dump-data",
        data_csv.to_str().unwrap(),
    ]);
    assert!(ok, "{err}");

    let trials = std::fs::read_to_string(&trials_csv).unwrap();
    let mut lines = trials.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,method,mu,excess,forgetting,intransigence"
    );
    assert_eq!(lines.count(), 3 * 2);

    let data = std::fs::read_to_string(&data_csv).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next().unwrap(), "task,x1,x2,x3,x4,y");
    // one row per sample per task
    assert_eq!(lines.count(), 2 * 6);
}

#[test]
fn sweep_supports_example_families_and_json() {
    let (out, err, ok) = run(&[
        "sweep", "--example", "ex35", "--n", "100,1000,10000", "--mu-schedule", "-0.6667",
        "--methods", "ocl,rcl", "--trials", "4", "--format", "json",
    ]);
    assert!(ok, "{err}");
    let table: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(table["independent"], "n");
    // 3 n-values x 2 methods x 2 sources
    assert_eq!(table["rows"].as_array().unwrap().len(), 12);
}

#[test]
fn theory_rejects_bad_inputs_with_nonzero_status() {
    let (_, err, ok) = run(&["theory", "--q", "5", "0", "--n", "100", "--mu", "-1"]);
    assert!(!ok);
    assert!(err.contains("non-negative"), "stderr: {err}");

    let (_, _, ok) = run(&["theory", "--n", "100"]);
    assert!(!ok, "missing instance source must fail");
}
