//! End-to-end runs of the `edpm` binary: outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use edpm::config::KEYS;

fn edpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edpm")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const TINY: &str = "n = 40\nd = 2\niterations = 150\nburn_in = 50\nbatches = 5\nbatch_size = 20\n\
                    pilot_n_theta = 4\npilot_m = 3\nvb_max_iters = 40\neps = 1.0\neps_theta = 0.5\n";

#[test]
fn help_documents_every_key() {
    for sub in ["plan", "simulate", "vb", "gibbs", "experiment"] {
        let out = edpm(&[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for (key, _) in KEYS {
            assert!(text.contains(&format!("  {key} ")), "{sub} --help misses {key}");
        }
    }
}

#[test]
fn plan_table_prints_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = edpm(&["plan", "--table", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 9);
    assert!(dir.path().join("plan_table.txt").exists());
}

#[test]
fn plan_writes_key_value_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "n = 200\nalpha_theta = 1.0\nalpha_psi_levels = [0.5, 1.5, 3.0]\n");
    let out = edpm(&["plan", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("plan.toml")).unwrap();
    assert!(text.contains("n_theta = 14"), "{text}");
}

#[test]
fn invalid_budget_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "eps = 0.01\neps_theta = 0.01\n");
    let out = edpm(&["plan", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ErrorBudget"));
}

#[test]
fn unknown_key_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), "replicates = 3\n");
    let out = edpm(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_y_column_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir.path().join("d.csv"), "x1,x2\n1,2\n");
    let out = edpm(&["vb", "--data", &data, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`y`"));
}

#[test]
fn simulate_then_gibbs_on_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), TINY);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    assert!(edpm(&["simulate", "--config", &cfg, "--seed", "3", "--out", o]).status.success());
    let data = out_dir.join("data.csv");
    assert!(out_dir.join("truth.toml").exists());
    let run = edpm(&["gibbs", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", o]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 101);
    assert!(trace.starts_with("iteration,alpha_theta,"));
    assert!(std::fs::read_to_string(out_dir.join("summary.toml")).unwrap().contains("policy = \"planner\""));
}

#[test]
fn experiment_smoke_emits_one_row_per_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.toml"), &format!("{TINY}replications = 1\n"));
    let o = dir.path().join("out");
    let run = edpm(&["experiment", "--config", &cfg, "--out", o.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = std::fs::read_to_string(o.join("table.txt")).unwrap();
    let header = table.lines().next().unwrap();
    for p in ["planner", "large", "fixed-m"] {
        assert!(header.contains(p));
        assert!(o.join(format!("traces/rep000_{p}.csv")).exists());
    }
    assert!(std::fs::read_to_string(o.join("results.toml")).unwrap().contains("replications_ok = 1"));
}
