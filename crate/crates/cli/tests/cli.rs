use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossed-gibbs")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

const SMALL: &str = r#"
seed = 11
out = "results"

[regime]
s = 300
rho = 0.52
kappa = 0.52
kind = "mcar"

[sampler]
iterations = 400
burn_in = 40
"#;

#[test]
fn simulate_sample_diagnose_into_config_relative_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for cmd in ["simulate", "sample", "diagnose", "analyze"] {
        let o = run(&[cmd, "--config", &cfg]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("manifest.json"));
    }
    let out = dir.path().join("results");
    for f in ["ratings.csv", "trace_collapsed.csv", "trace_vanilla.csv", "ess.csv", "analyze.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "analyze");
    assert_eq!(m["seed"], 11);
}

#[test]
fn seed_and_out_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "11"), (&b, "12")] {
        let o = run(&["simulate", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert!(!dir.path().join("results").exists());
    assert_eq!(json(&b.join("manifest.json"))["seed"], 12);
    assert_ne!(fs::read(a.join("ratings.csv")).unwrap(), fs::read(b.join("ratings.csv")).unwrap());
    assert_ne!(
        json(&a.join("manifest.json"))["config_hash"],
        json(&b.join("manifest.json"))["config_hash"]
    );
}

#[test]
fn errors_exit_one_with_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[sampler]\niterations = 10\n");
    let o = run(&["sample", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["command"], "sample");
    assert_eq!(report["kind"], "config");

    let o = run(&["simulate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(report["kind"], "config");
    assert!(report["message"].as_str().unwrap().contains("missing.toml"));

    let cfg = write_config(dir.path(), "bogus_key = 1\n");
    let o = run(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        "{SMALL}\n[[verify.checks]]\ncheck = \"latala\"\ns_grid = [300]\nreplicates = 2\ncap = 0.01\n"
    );
    let cfg = write_config(dir.path(), &body);
    let o = run(&["verify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("results/verify.json"))["all_passed"], false);

    let cfg = write_config(dir.path(), &body.replace("cap = 0.01", "cap = 3.0"));
    let o = run(&["verify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_command_is_a_usage_error() {
    let o = run(&["frobnicate", "--config", "x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
