//! The training loop: scheduler -> environment -> learner, one episode at a time.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bimab_core::bandit::{BanditError, CurriculumIndex};
use bimab_core::env::observation::{DISTANCE_CLIP, FEATURES, SPEED_LEVELS};
use bimab_core::env::{EnvError, IntersectionEnv, MultiDiscreteAction};
use bimab_core::ppo::checkpoint::{self, CheckpointError};
use bimab_core::ppo::{ActMode, PpoError, Step, UpdateDiagnostics};
use bimab_core::{ActorCritic, PpoLearner};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::scheduler::Scheduler;
use crate::trace::{EpisodeTrace, Outcome, Timing, TraceSink};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Independent random streams of a run, all derived from the run seed.
pub struct Streams {
    pub scheduler: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub policy: ChaCha8Rng,
    pub init: ChaCha8Rng,
    pub learner_seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            scheduler: stream(0),
            env: stream(1),
            policy: stream(2),
            init: stream(3),
            learner_seed: seed ^ 0x5eed_1ea2_0000_0004,
        }
    }
}

/// Per-feature scale that brings observations to order one. The ego row holds
/// unclipped distances to the goal, so it uses the arm length instead of the
/// SV clip bound.
pub fn observation_scale(cfg: &RunConfig) -> Vec<f64> {
    let v_max = SPEED_LEVELS[SPEED_LEVELS.len() - 1];
    let pi = std::f64::consts::PI;
    let ego_d = cfg.env.map.arm_length.max(1.0);
    let mut s = vec![1.0 / ego_d, 1.0 / ego_d, 1.0 / v_max, 1.0 / pi];
    for _ in 0..cfg.env.n_sv_max {
        s.extend_from_slice(&[1.0 / DISTANCE_CLIP, 1.0 / DISTANCE_CLIP, 1.0 / v_max, 1.0 / pi]);
    }
    debug_assert_eq!(s.len(), (cfg.env.n_sv_max + 1) * FEATURES);
    s
}

/// Freshly initialised policy for `cfg`.
pub fn initial_policy(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> ActorCritic {
    let obs_dim = (cfg.env.n_sv_max + 1) * FEATURES;
    ActorCritic::new(obs_dim, &cfg.ppo.hidden, MultiDiscreteAction::HEAD_SIZES, rng)
        .with_input_scale(Array1::from(observation_scale(cfg)))
}

/// Result of playing one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub outcome: Outcome,
    /// Reward of the final decision, the signal handed to the scheduler.
    pub terminal_reward: f64,
    pub total_reward: f64,
    pub sim_steps: usize,
    pub trajectory: Vec<Step<f64>>,
}

/// Plays one episode with `policy` on `curriculum`.
pub fn run_episode(
    env: &mut IntersectionEnv,
    policy: &ActorCritic,
    curriculum: CurriculumIndex,
    mode: ActMode,
    env_rng: &mut ChaCha8Rng,
    policy_rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult, TrainError> {
    let mut obs = env.reset(curriculum, env_rng)?.flatten();
    let mut trajectory = Vec::new();
    loop {
        let out = policy.act(&obs, mode, policy_rng);
        let action = MultiDiscreteAction::from_indices(out.indices).expect("head sizes match the action space");
        let tr = env.step(&action)?;
        let next = tr.observation.flatten();
        trajectory.push(Step {
            observation: std::mem::replace(&mut obs, next),
            action: out.indices,
            log_prob: out.log_prob,
            reward: tr.reward,
            value: out.value,
            done: tr.done,
        });
        if tr.done {
            let o = tr.outcome.expect("terminal transition carries an outcome");
            return Ok(EpisodeResult {
                outcome: o.terminal_kind.into(),
                terminal_reward: tr.reward,
                total_reward: o.total_reward,
                sim_steps: o.steps,
                trajectory,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub episodes: u64,
    pub policy: ActorCritic,
    pub successes: u64,
    pub updates: u64,
    pub last_update: Option<UpdateDiagnostics<f64>>,
    pub checkpoints: Vec<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Runs the full training loop. Checkpoints go to `checkpoint_dir` when given.
/// On error the sink is flushed before returning.
pub fn train<S: TraceSink>(
    cfg: &RunConfig,
    sink: &mut S,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainSummary, TrainError> {
    let result = train_inner(cfg, sink, checkpoint_dir);
    let flushed = sink.flush();
    let summary = result?;
    flushed?;
    Ok(summary)
}

fn train_inner<S: TraceSink>(
    cfg: &RunConfig,
    sink: &mut S,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainSummary, TrainError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let mut streams = Streams::new(cfg.seed);
    let mut scheduler = Scheduler::new(cfg.scheduler, &cfg.bandit, cfg.manual_stages.clone(), cfg.t_max)?;
    let mut env = IntersectionEnv::new(cfg.env.clone(), cfg.mpc.clone())?;
    let policy = initial_policy(cfg, &mut streams.init);
    let mut learner = PpoLearner::new(cfg.ppo.clone(), policy, streams.learner_seed)?;
    let mut checkpoints = Vec::new();
    let mut save = |name: String, policy: &ActorCritic| -> Result<(), TrainError> {
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(name);
            checkpoint::save(policy, &path)?;
            checkpoints.push(path);
        }
        Ok(())
    };

    if let Some(s) = scheduler.snapshot() {
        sink.snapshot(&s)?;
    }
    let (mut successes, mut updates, mut last_update) = (0, 0, None);
    for t in 0..cfg.t_max {
        let start = Instant::now();
        learner.set_progress(t as f64 / cfg.t_max as f64);
        let index = scheduler.sample(t, &mut streams.scheduler)?;
        let ep = run_episode(&mut env, learner.live(), index, ActMode::Sample, &mut streams.env, &mut streams.policy)?;
        if let Some(d) = learner.record_episode(ep.trajectory)? {
            updates += 1;
            last_update = Some(d);
        }
        let feedback = scheduler.observe(index, ep.terminal_reward)?;
        successes += u64::from(ep.outcome == Outcome::Success);
        sink.episode(&EpisodeTrace::new(
            t + 1,
            index,
            ep.terminal_reward,
            feedback.as_ref(),
            ep.outcome,
            ep.sim_steps as u64,
        ))?;
        if feedback.is_some_and(|f| f.synced) {
            sink.snapshot(&scheduler.snapshot().expect("bandit scheduler"))?;
        }
        sink.timing(&Timing { t: t + 1, wall_ms: start.elapsed().as_secs_f64() * 1e3 })?;
        if cfg.checkpoint_interval > 0 && (t + 1) % cfg.checkpoint_interval == 0 && t + 1 < cfg.t_max {
            save(format!("episode_{:07}.ckpt", t + 1), learner.live())?;
        }
    }
    save(FINAL_CHECKPOINT.to_string(), learner.live())?;
    Ok(TrainSummary {
        episodes: cfg.t_max,
        policy: learner.live().clone(),
        successes,
        updates,
        last_update,
        checkpoints,
    })
}
