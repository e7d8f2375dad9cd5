//! Exit codes and file outputs of the `bimab` binary.

use std::path::Path;
use std::process::{Command, Output};

fn bimab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bimab")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = bimab_harness::config::RunConfig::default();
    cfg.ppo.hidden = vec![8];
    cfg.ppo.epochs = 1;
    cfg.bandit.sync_interval = 5;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn unknown_scheduler_is_a_config_error() {
    let out = bimab(&["train", "--scheduler", "greedy", "--episodes", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = bimab_harness::config::RunConfig::default().to_toml().unwrap();
    std::fs::write(&path, text.replacen("seed = 0", "seed = 0\nsead = 3", 1)).unwrap();
    let out = bimab(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sead"));
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bimab(&["eval", "--out", dir.path().to_str().unwrap(), "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let out = bimab(&["train", "--seed", "9", "--scheduler", "manual", "--print-config"]);
    assert_eq!(out.status.code(), Some(0));
    let cfg = bimab_harness::config::RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.scheduler.to_string(), "manual");
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("run");
    let (c, o) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());

    let out = bimab(&["train", "--config", c, "--out", o, "--episodes", "12"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "episodes.jsonl", "snapshots.jsonl", "timings.jsonl", "checkpoints/final.ckpt"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }

    let out = bimab(&["eval", "--config", c, "--out", o, "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("eval.json").exists());

    let out = bimab(&["report", "--out", o]);
    assert_eq!(out.status.code(), Some(0));
    let report: bimab_harness::report::Report =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.episodes, 12);
    assert_eq!(report.cluster_totals().iter().sum::<u64>(), 12);
    assert_eq!(report.evaluation.unwrap().cells.len(), 12);
    let snaps: Vec<u64> = report.weight_series.iter().map(|s| s.episode).collect();
    assert_eq!(snaps, vec![0, 5, 10]);
}

#[test]
fn report_on_empty_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = bimab(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no episodes"));
}

#[test]
fn report_fails_above_one_percent_corrupt_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = bimab(&["bandit-sim", "--out", dir.path().to_str().unwrap(), "--episodes", "300"]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("episodes.jsonl");
    let mut text = std::fs::read_to_string(&path).unwrap();

    // one bad line in 301 is under the threshold
    text.push_str("{\"t\": broken\n");
    std::fs::write(&path, &text).unwrap();
    let out = bimab(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt"));

    for _ in 0..5 {
        text.push_str("not json\n");
    }
    std::fs::write(&path, &text).unwrap();
    let out = bimab(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}
