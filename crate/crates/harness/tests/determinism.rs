//! Same configuration and seed give byte-identical artifacts.

use std::path::Path;

use bimab_core::bandit::SchedulerKind;
use bimab_harness::bandit_sim::bandit_sim;
use bimab_harness::config::RunConfig;
use bimab_harness::trace::{FileSink, EPISODES_FILE, SNAPSHOTS_FILE};
use bimab_harness::train::{train, FINAL_CHECKPOINT};

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.t_max = 40;
    cfg.ppo.hidden = vec![16, 8];
    cfg.ppo.epochs = 2;
    cfg.bandit.sync_interval = 10;
    cfg.checkpoint_interval = 20;
    cfg
}

fn run(cfg: &RunConfig, dir: &Path) {
    let mut sink = FileSink::create(dir).unwrap();
    train(cfg, &mut sink, Some(&dir.join("checkpoints"))).unwrap();
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn training_artifacts_are_byte_identical() {
    for kind in [SchedulerKind::Bimab, SchedulerKind::Random] {
        let mut cfg = small();
        cfg.scheduler = kind;
        cfg.seed = 7;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(&cfg, a.path());
        run(&cfg, b.path());
        for f in [EPISODES_FILE, SNAPSHOTS_FILE, "checkpoints/episode_0000020.ckpt", "checkpoints/final.ckpt"] {
            assert_eq!(bytes(a.path().join(f)), bytes(b.path().join(f)), "{kind} {f}");
        }
        assert!(a.path().join("checkpoints").join(FINAL_CHECKPOINT).exists());
    }
}

#[test]
fn different_seeds_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small();
    run(&cfg, a.path());
    cfg.seed = 1;
    run(&cfg, b.path());
    assert_ne!(bytes(a.path().join(EPISODES_FILE)), bytes(b.path().join(EPISODES_FILE)));
}

#[test]
fn bandit_sim_traces_are_byte_identical() {
    let cfg = RunConfig::default();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut sink = FileSink::create(d.path()).unwrap();
        bandit_sim(&cfg.synthetic, &cfg.bandit, &cfg.env.reward, SchedulerKind::Bimab, None, 3000, 5, &mut sink).unwrap();
    }
    for f in [EPISODES_FILE, SNAPSHOTS_FILE] {
        assert_eq!(bytes(dirs[0].path().join(f)), bytes(dirs[1].path().join(f)));
    }
}
