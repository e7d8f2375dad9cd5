//! Clipped PPO with generalized advantage estimation and a temporary policy.
//!
//! Episodes are collected with the live (acting) parameters. Every
//! `update_interval` episodes the temporary copy is trained on the buffered
//! episodes; every `sync_interval` episodes the live parameters are replaced by
//! the temporary ones.

pub mod checkpoint;
pub mod network;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{ActMode, ActOutput, ActorCritic, ActorStats, Dense, LossBatch, Mlp};

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory must end with exactly one terminal step")]
    MalformedTrajectory,
    #[error("observation has {got} values, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite {what} loss in epoch {epoch}; update aborted")]
    NonFiniteLoss { what: &'static str, epoch: usize },
    #[error("policy sync at episode {episode} is off the {interval}-episode schedule")]
    OffScheduleSync { episode: u64, interval: u64 },
    #[error("invalid PPO configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig<T> {
    pub clip_epsilon: T,
    pub gamma: T,
    pub gae_lambda: T,
    pub epochs: usize,
    pub actor_lr: T,
    pub critic_lr: T,
    /// Episodes between copying the temporary parameters into the live policy.
    pub sync_interval: u64,
    /// Episodes between optimisation passes on the temporary policy.
    pub update_interval: u64,
    pub minibatch_size: usize,
    pub entropy_coef: T,
    /// Global gradient-norm bound per network.
    pub max_grad_norm: T,
    /// Both learning rates decay linearly with training progress down to this
    /// fraction of their initial values; 1 keeps them constant.
    pub lr_final_fraction: T,
    pub hidden: Vec<usize>,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_epsilon: T,
}

impl<T: Real> Default for PpoConfig<T> {
    fn default() -> Self {
        Self {
            clip_epsilon: T::lit(0.2),
            gamma: T::lit(0.99),
            gae_lambda: T::lit(0.95),
            epochs: 20,
            actor_lr: T::lit(5e-4),
            critic_lr: T::lit(1e-3),
            sync_interval: 20,
            update_interval: 10,
            minibatch_size: 256,
            entropy_coef: T::lit(0.01),
            max_grad_norm: T::lit(0.5),
            lr_final_fraction: T::lit(0.05),
            hidden: vec![256, 128],
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_epsilon: T::lit(1e-8),
        }
    }
}

impl<T: Real> PpoConfig<T> {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.into()));
        let open01 = |v: T| v > T::zero() && v < T::one();
        if !open01(self.clip_epsilon) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !open01(self.gamma) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.gae_lambda >= T::zero() && self.gae_lambda <= T::one()) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.sync_interval == 0 || self.update_interval == 0 {
            return bad("epochs, minibatch_size and intervals must be positive");
        }
        if !(self.actor_lr > T::zero() && self.critic_lr > T::zero() && self.max_grad_norm > T::zero()) {
            return bad("learning rates and max_grad_norm must be positive");
        }
        if !(self.lr_final_fraction >= T::zero() && self.lr_final_fraction <= T::one()) {
            return bad("lr_final_fraction must lie in [0, 1]");
        }
        if !(self.entropy_coef >= T::zero()) {
            return bad("entropy_coef must be non-negative");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }
}

/// One decision of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub observation: Vec<T>,
    pub action: [usize; 3],
    pub log_prob: T,
    pub reward: T,
    pub value: T,
    pub done: bool,
}

pub type Trajectory<T> = Vec<Step<T>>;

fn check_trajectory<T>(traj: &[Step<T>]) -> Result<(), PpoError> {
    let Some(last) = traj.last() else { return Err(PpoError::EmptyTrajectory) };
    if !last.done || traj[..traj.len() - 1].iter().any(|s| s.done) {
        return Err(PpoError::MalformedTrajectory);
    }
    Ok(())
}

/// Advantages and returns by the backward GAE recursion, bootstrapping zero
/// after the final step.
pub fn gae<T: Real>(rewards: &[T], values: &[T], gamma: T, lambda: T) -> Result<(Vec<T>, Vec<T>), PpoError> {
    if rewards.is_empty() {
        return Err(PpoError::EmptyTrajectory);
    }
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut next_value = T::zero();
    let mut acc = T::zero();
    for k in (0..n).rev() {
        let delta = rewards[k] + gamma * next_value - values[k];
        acc = delta + gamma * lambda * acc;
        adv[k] = acc;
        next_value = values[k];
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    Ok((adv, returns))
}

/// Adam state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    m: Mlp<T>,
    v: Mlp<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(shape_of: &Mlp<T>) -> Self {
        Self { m: shape_of.zeros_like(), v: shape_of.zeros_like(), t: 0 }
    }

    /// Clips `grad` to `max_norm` and applies one Adam step to `params`.
    pub fn step(&mut self, params: &mut Mlp<T>, grad: &Mlp<T>, lr: T, cfg: &PpoConfig<T>) {
        let norm = grad.params().map(|&g| g * g).sum::<T>().sqrt();
        let scale = if norm > cfg.max_grad_norm { cfg.max_grad_norm / norm } else { T::one() };
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let it = params.params_mut().zip(grad.params()).zip(self.m.params_mut().zip(self.v.params_mut()));
        for ((p, &g), (m, v)) in it {
            let g = g * scale;
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + cfg.adam_epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateDiagnostics<T> {
    pub samples: usize,
    pub mean_ratio: T,
    pub clip_fraction: T,
    pub value_loss: T,
    pub policy_loss: T,
    pub entropy: T,
}

#[derive(Debug, Clone)]
pub struct PpoLearner<T> {
    pub config: PpoConfig<T>,
    live: ActorCritic<T>,
    temp: ActorCritic<T>,
    actor_opt: Adam<T>,
    critic_opt: Adam<T>,
    buffer: Vec<Trajectory<T>>,
    episodes: u64,
    lr_scale: T,
    rng: ChaCha8Rng,
}

impl<T: Real> PpoLearner<T> {
    pub fn new(config: PpoConfig<T>, policy: ActorCritic<T>, seed: u64) -> Result<Self, PpoError> {
        config.validate()?;
        Ok(Self {
            actor_opt: Adam::new(&policy.actor),
            critic_opt: Adam::new(&policy.critic),
            temp: policy.clone(),
            live: policy,
            config,
            buffer: Vec::new(),
            episodes: 0,
            lr_scale: T::one(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn live(&self) -> &ActorCritic<T> {
        &self.live
    }

    pub fn temp(&self) -> &ActorCritic<T> {
        &self.temp
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Sets the learning-rate decay from the fraction of the training budget
    /// already spent, clamped to [0, 1].
    pub fn set_progress(&mut self, progress: T) {
        let p = progress.max(T::zero()).min(T::one());
        self.lr_scale = T::one() - p * (T::one() - self.config.lr_final_fraction);
    }

    pub fn lr_scale(&self) -> T {
        self.lr_scale
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[T], mode: ActMode, rng: &mut R) -> Result<ActOutput<T>, PpoError> {
        if obs.len() != self.live.obs_dim() {
            return Err(PpoError::ShapeMismatch { expected: self.live.obs_dim(), got: obs.len() });
        }
        Ok(self.live.act(obs, mode, rng))
    }

    /// Stores a finished episode, trains the temporary policy and syncs the
    /// live one when their schedules fall due.
    pub fn record_episode(&mut self, traj: Trajectory<T>) -> Result<Option<UpdateDiagnostics<T>>, PpoError> {
        check_trajectory(&traj)?;
        if let Some(s) = traj.iter().find(|s| s.observation.len() != self.live.obs_dim()) {
            return Err(PpoError::ShapeMismatch { expected: self.live.obs_dim(), got: s.observation.len() });
        }
        self.buffer.push(traj);
        self.episodes += 1;
        let mut diag = None;
        if self.episodes % self.config.update_interval == 0 {
            let batch = std::mem::take(&mut self.buffer);
            diag = Some(self.update(&batch)?);
        }
        if self.episodes % self.config.sync_interval == 0 {
            self.sync_policy()?;
        }
        Ok(diag)
    }

    /// Copies the temporary parameters into the live policy.
    pub fn sync_policy(&mut self) -> Result<(), PpoError> {
        if self.episodes % self.config.sync_interval != 0 {
            return Err(PpoError::OffScheduleSync { episode: self.episodes, interval: self.config.sync_interval });
        }
        self.live = self.temp.clone();
        Ok(())
    }

    /// Runs the clipped-surrogate optimisation of the temporary policy on a batch.
    pub fn update(&mut self, batch: &[Trajectory<T>]) -> Result<UpdateDiagnostics<T>, PpoError> {
        if batch.is_empty() {
            return Err(PpoError::EmptyTrajectory);
        }
        let dim = self.temp.obs_dim();
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        let mut old_lp = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for traj in batch {
            check_trajectory(traj)?;
            let flat: Vec<T> = traj.iter().flat_map(|s| s.observation.iter().copied()).collect();
            let x = Array2::from_shape_vec((traj.len(), dim), flat)
                .map_err(|_| PpoError::ShapeMismatch { expected: dim, got: traj[0].observation.len() })?;
            let values = self.temp.values(x.view());
            let rewards: Vec<T> = traj.iter().map(|s| s.reward).collect();
            let (a, r) = gae(&rewards, values.as_slice().expect("contiguous"), self.config.gamma, self.config.gae_lambda)?;
            obs.extend(x.iter().copied());
            actions.extend(traj.iter().map(|s| s.action));
            old_lp.extend(traj.iter().map(|s| s.log_prob));
            adv.extend(a);
            ret.extend(r);
        }
        let n = actions.len();
        let nt = T::lit(n as f64);
        let mean = adv.iter().copied().sum::<T>() / nt;
        let var = adv.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / nt;
        let sd = var.sqrt() + T::lit(1e-8);
        adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        let obs = Array2::from_shape_vec((n, dim), obs).expect("rows of equal width");

        let mut diag = UpdateDiagnostics { samples: n, ..Default::default() };
        let mut counted = T::zero();
        let mut order: Vec<usize> = (0..n).collect();
        let mb = self.config.minibatch_size.min(n);
        let (actor_lr, critic_lr) = (self.config.actor_lr * self.lr_scale, self.config.critic_lr * self.lr_scale);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                let x = obs.select(ndarray::Axis(0), chunk);
                let acts: Vec<[usize; 3]> = chunk.iter().map(|&i| actions[i]).collect();
                let lps: Vec<T> = chunk.iter().map(|&i| old_lp[i]).collect();
                let advs: Vec<T> = chunk.iter().map(|&i| adv[i]).collect();
                let rets: Vec<T> = chunk.iter().map(|&i| ret[i]).collect();
                let lb = LossBatch { obs: x.view(), actions: &acts, old_log_probs: &lps, advantages: &advs, returns: &rets };
                let (pl, stats, ga) = self.temp.actor_loss_grad(&lb, self.config.clip_epsilon, self.config.entropy_coef);
                if !pl.is_finite() {
                    return Err(PpoError::NonFiniteLoss { what: "policy", epoch });
                }
                let (vl, gc) = self.temp.critic_loss_grad(x.view(), &rets);
                if !vl.is_finite() {
                    return Err(PpoError::NonFiniteLoss { what: "value", epoch });
                }
                self.actor_opt.step(&mut self.temp.actor, &ga, actor_lr, &self.config);
                self.critic_opt.step(&mut self.temp.critic, &gc, critic_lr, &self.config);
                diag.mean_ratio += stats.mean_ratio;
                diag.clip_fraction += stats.clip_fraction;
                diag.policy_loss += pl;
                diag.value_loss += vl;
                diag.entropy += stats.entropy;
                counted += T::one();
            }
        }
        diag.mean_ratio /= counted;
        diag.clip_fraction /= counted;
        diag.policy_loss /= counted;
        diag.value_loss /= counted;
        diag.entropy /= counted;
        if !self.temp.is_finite() {
            return Err(PpoError::NonFiniteLoss { what: "parameter", epoch: self.config.epochs });
        }
        Ok(diag)
    }
}
