//! Synthetic learner for exercising the schedulers without RL cost.
//!
//! Each curriculum `(i, j)` has a success probability
//! `p_ij(n) = 1 - (1 - p0) * exp(-n_eff / tau_ij)` where `n_eff` counts the
//! episodes played on `(i, j)` plus a discounted share of the episodes played
//! on every easier curriculum (smaller `tau`). The episode reward is drawn
//! from the same reward function the simulator uses, so the bandit sees
//! rewards of realistic scale and sign.

use bimab_core::bandit::{BanditError, CurriculumIndex, SchedulerKind};
use bimab_core::env::reward::{reward, RewardContext};
use bimab_core::env::{n_pcp, Region, RewardConfig, StepEvents, TaskType};
use bimab_core::BanditConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scheduler::Scheduler;
use crate::trace::{EpisodeTrace, Outcome, TraceSink};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Success probability before any training.
    pub p0: f64,
    /// Learning time constant of the easiest curriculum (no SVs, right turn).
    pub tau_base: f64,
    /// Factor applied to `tau` per additional surrounding vehicle.
    pub tau_cluster_growth: f64,
    /// Per-arm factor on `tau`, indexed left turn, go straight, right turn.
    pub arm_hardness: Vec<f64>,
    /// Share of an easier curriculum's episodes credited to a harder one.
    pub transfer: f64,
    /// Share of failures with surrounding vehicles that end in a collision
    /// rather than a timeout.
    pub collision_share: f64,
    /// Range of the goal distance at failure, m.
    pub failure_distance: [f64; 2],
    /// Range of the ego speed at a collision, m/s.
    pub collision_speed: [f64; 2],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            p0: 0.1,
            tau_base: 50.0,
            tau_cluster_growth: 2.3,
            arm_hardness: vec![2.8, 2.6, 1.0],
            transfer: 0.2,
            collision_share: 0.35,
            failure_distance: [20.0, 28.0],
            collision_speed: [5.0, 5.5],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, n_arms: usize) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.p0) {
            return Err("synthetic.p0 must lie in [0, 1)".into());
        }
        if !(self.tau_base > 0.0 && self.tau_cluster_growth > 0.0) {
            return Err("synthetic tau parameters must be positive".into());
        }
        if self.arm_hardness.len() != n_arms || self.arm_hardness.iter().any(|&h| !(h > 0.0)) {
            return Err(format!("synthetic.arm_hardness needs {n_arms} positive entries"));
        }
        if !(0.0..=1.0).contains(&self.transfer) || !(0.0..=1.0).contains(&self.collision_share) {
            return Err("synthetic.transfer and collision_share must lie in [0, 1]".into());
        }
        for r in [self.failure_distance, self.collision_speed] {
            if !(r[0] >= 0.0 && r[1] >= r[0]) {
                return Err("synthetic ranges must be ordered and nonnegative".into());
            }
        }
        Ok(())
    }

    /// Time constant of curriculum `(cluster, arm)`.
    pub fn tau(&self, cluster: usize, arm: usize) -> f64 {
        self.tau_base * self.tau_cluster_growth.powi(cluster as i32) * self.arm_hardness[arm]
    }
}

/// Training state of the synthetic learner: episodes played per curriculum.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLearner {
    pub config: SyntheticConfig,
    pub counts: Vec<Vec<u64>>,
}

impl SyntheticLearner {
    pub fn new(config: SyntheticConfig, n_clusters: usize, n_arms: usize) -> Self {
        Self { config, counts: vec![vec![0; n_arms]; n_clusters] }
    }

    pub fn effective_episodes(&self, cluster: usize, arm: usize) -> f64 {
        let c = &self.config;
        let tau = c.tau(cluster, arm);
        let mut n = self.counts[cluster][arm] as f64;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &k) in row.iter().enumerate() {
                if c.tau(i, j) < tau {
                    n += c.transfer * k as f64;
                }
            }
        }
        n
    }

    pub fn success_probability(&self, cluster: usize, arm: usize) -> f64 {
        let c = &self.config;
        1.0 - (1.0 - c.p0) * (-self.effective_episodes(cluster, arm) / c.tau(cluster, arm)).exp()
    }

    /// Plays one episode on `index`: draws the outcome and its reward, then
    /// counts the episode as training experience.
    pub fn play<R: Rng + ?Sized>(
        &mut self,
        index: CurriculumIndex,
        reward_cfg: &RewardConfig,
        rng: &mut R,
    ) -> (Outcome, f64) {
        let c = &self.config;
        let p = self.success_probability(index.cluster, index.arm);
        let task = TaskType::from_index(index.arm).unwrap_or(TaskType::GoStraight);
        let origins: Vec<Region> =
            (0..index.cluster).map(|_| Region::SV_ORIGINS[rng.gen_range(0..Region::SV_ORIGINS.len())]).collect();
        let pcp = n_pcp(task, &origins).unwrap_or(0);
        let success = rng.gen::<f64>() < p;
        let collision = !success && index.cluster > 0 && rng.gen::<f64>() < c.collision_share;
        let uniform = |r: [f64; 2], rng: &mut R| r[0] + (r[1] - r[0]) * rng.gen::<f64>();
        let goal_distance = if success { 0.0 } else { uniform(c.failure_distance, rng) };
        let ev_speed = if collision { uniform(c.collision_speed, rng) } else { 0.0 };
        let events = StepEvents { collision, success, timeout: !success && !collision, offroad: false };
        let ctx = RewardContext { n_sv: index.cluster, n_pcp: pcp, goal_distance, ev_speed, lane_changed: false };
        let r = reward(reward_cfg, &events, &ctx);
        self.counts[index.cluster][index.arm] += 1;
        let outcome = if success {
            Outcome::Success
        } else if collision {
            Outcome::Collision
        } else {
            Outcome::Timeout
        };
        (outcome, r)
    }
}

/// Sampled counts and final learner state of one synthetic run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub counts: Vec<Vec<u64>>,
    /// Live argmax cluster right after every sync, in order.
    pub argmax_path: Vec<usize>,
    pub final_success: Vec<Vec<f64>>,
}

impl SimSummary {
    pub fn cluster_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("trace i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs `t_max` synthetic episodes under the given scheduler and streams the
/// same records a training run would.
#[allow(clippy::too_many_arguments)]
pub fn bandit_sim<S: TraceSink>(
    synthetic: &SyntheticConfig,
    bandit: &BanditConfig,
    reward_cfg: &RewardConfig,
    kind: SchedulerKind,
    stages: Option<Vec<u64>>,
    t_max: u64,
    seed: u64,
    sink: &mut S,
) -> Result<SimSummary, SimError> {
    synthetic.validate(bandit.n_arms).map_err(SimError::Config)?;
    let mut scheduler = Scheduler::new(kind, bandit, stages, t_max)?;
    let mut learner = SyntheticLearner::new(synthetic.clone(), bandit.n_clusters, bandit.n_arms);
    let mut sched_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(1);
    let mut argmax_path = Vec::new();

    if let Some(s) = scheduler.snapshot() {
        sink.snapshot(&s)?;
    }
    for t in 0..t_max {
        let index = scheduler.sample(t, &mut sched_rng)?;
        let (outcome, raw) = learner.play(index, reward_cfg, &mut env_rng);
        let feedback = scheduler.observe(index, raw)?;
        sink.episode(&EpisodeTrace::new(t + 1, index, raw, feedback.as_ref(), outcome, 1))?;
        if feedback.is_some_and(|f| f.synced) {
            let snap = scheduler.snapshot().expect("bandit scheduler");
            argmax_path.push(scheduler.bandit().expect("bandit scheduler").live_argmax_cluster());
            sink.snapshot(&snap)?;
        }
    }
    sink.flush()?;
    let final_success = (0..bandit.n_clusters)
        .map(|i| (0..bandit.n_arms).map(|j| learner.success_probability(i, j)).collect())
        .collect();
    Ok(SimSummary { counts: learner.counts, argmax_path, final_success })
}
