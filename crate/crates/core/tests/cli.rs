use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hlmc::checkpoint::load;
use hlmc::config::Config;

fn hlmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlmc")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = Config::default();
    cfg.train.epochs = 2;
    cfg.env.horizon = 200;
    cfg.fusion.ensemble_size = 2;
    cfg.fusion.update_every = 100;
    cfg.bench.seeds = vec![0];
    let path = dir.join("tiny.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bench_lqr_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("bench");
    let o = hlmc(&["bench", "--method", "lqr", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("bench_results.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    assert!(out.join("bench_results.md").exists());
}

#[test]
fn hybrid_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlmc(&["bench", "--method", "hybrid", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn simulate_balance_writes_a_settling_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = hlmc(&["simulate", "--task", "balance", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 10);
    let last: Vec<f64> = lines.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(last.len(), 10);
    assert!(last[5].abs() < 1e-3, "final pitch {}", last[5]);
}

#[test]
fn simulate_follows_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("ref.csv");
    fs::write(&trace, "t,x_des,xdot_des\n0,0,0\n4,1,0.5\n8,2,0\n").unwrap();
    let out = dir.path().join("sim");
    let o = hlmc(&[
        "simulate", "--task", "trace", "--trace", trace.to_str().unwrap(), "--theta0", "0", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1000).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    // At t = 2 s the interpolated reference is halfway along the first leg.
    assert!((row[0] - 2.0).abs() < 1e-9);
    assert!((row[2] - 0.5).abs() < 1e-9);
    assert!((row[4] - 0.25).abs() < 1e-9);

    let o = hlmc(&["simulate", "--task", "trace", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn untrained_checkpoint_loads_and_drives_the_hybrid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("train");
    let o = hlmc(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = out.join("checkpoint.hlmc");
    let loaded = load(&ck).unwrap();
    assert_eq!(loaded.members.len(), 2);
    assert_eq!(fs::read_to_string(out.join("training.csv")).unwrap().lines().count(), 3);

    let bench = dir.path().join("bench");
    let o = hlmc(&[
        "bench", "--method", "hybrid", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--out",
        bench.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn same_seed_training_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = hlmc(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("checkpoint.hlmc")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn lqr_synth_reports_stable_poles() {
    let o = hlmc(&["lqr-synth"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("K = ["));
    let poles: Vec<f64> = text
        .lines()
        .filter_map(|l| l.strip_prefix("closed-loop eigenvalue "))
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(poles.len(), 4);
    assert!(poles.iter().all(|&re| re < 0.0));
}
