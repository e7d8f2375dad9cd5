//! Two-level Exp3.S-style bandit over training curricula.
//!
//! A curriculum is a `(cluster, arm)` pair: the cluster is the number of
//! surrounding vehicles and the arm the ego task (0 left turn, 1 go straight,
//! 2 right turn). Sampling first draws a cluster from the cluster weights, then
//! an arm from that cluster's arm weights, each through an exponential-weight
//! distribution mixed with a uniform floor `eta / K`.
//!
//! Updates are not applied to the sampling weights directly. Every episode's
//! rescaled reward is accumulated into a *target* copy; the live weights are
//! overwritten by the target weights only at episodes divisible by the sync
//! interval.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BanditError {
    #[error("non-finite bandit weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("cluster {cluster} out of range (have {n_clusters})")]
    ClusterOutOfRange { cluster: usize, n_clusters: usize },
    #[error("arm {arm} out of range (have {n_arms})")]
    ArmOutOfRange { arm: usize, n_arms: usize },
    #[error("sync requested at episode {episode}, not a multiple of {interval}")]
    OffScheduleSync { episode: u64, interval: u64 },
    #[error("invalid bandit configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown scheduler kind `{0}`")]
    UnknownScheduler(String),
}

/// One curriculum: `cluster` surrounding vehicles, ego task `arm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CurriculumIndex {
    pub cluster: usize,
    pub arm: usize,
}

impl CurriculumIndex {
    pub fn new(cluster: usize, arm: usize) -> Self {
        Self { cluster, arm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig<T> {
    /// Number of clusters, i.e. maximum surrounding-vehicle count plus one.
    pub n_clusters: usize,
    /// Number of arms per cluster, i.e. number of task types.
    pub n_arms: usize,
    /// Uniform exploration mix in `(0, 1]`.
    pub eta: T,
    pub alpha_c: T,
    pub alpha_a: T,
    pub beta_c: T,
    pub beta_a: T,
    pub k0: T,
    pub k1: T,
    pub alpha_md: T,
    /// Episodes between target-to-live synchronisations.
    pub sync_interval: u64,
    pub initial_weight: T,
    /// Weights are clamped to `[-weight_limit, weight_limit]` after every sync.
    pub weight_limit: T,
}

impl<T: Real> Default for BanditConfig<T> {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            n_arms: 3,
            eta: T::lit(0.2),
            alpha_c: T::lit(0.1),
            alpha_a: T::lit(0.1),
            beta_c: T::lit(0.001),
            beta_a: T::lit(0.001),
            k0: T::one(),
            k1: T::one(),
            alpha_md: T::one(),
            sync_interval: 1000,
            initial_weight: T::one(),
            weight_limit: T::lit(50.0),
        }
    }
}

impl<T: Real> BanditConfig<T> {
    pub fn validate(&self) -> Result<(), BanditError> {
        let bad = |m: &str| Err(BanditError::InvalidConfig(m.to_string()));
        if self.n_clusters == 0 || self.n_arms == 0 {
            return bad("need at least one cluster and one arm");
        }
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return bad("eta must lie in (0, 1]");
        }
        let positive = [
            self.alpha_c,
            self.alpha_a,
            self.beta_c,
            self.beta_a,
            self.k0,
            self.k1,
            self.alpha_md,
            self.weight_limit,
        ];
        if positive.iter().any(|&c| !(c > T::zero()) || !c.is_finite()) {
            return bad("scale constants must be positive and finite");
        }
        if self.sync_interval == 0 {
            return bad("sync_interval must be at least 1");
        }
        if !self.initial_weight.is_finite() {
            return bad("initial weight must be finite");
        }
        Ok(())
    }
}

/// `(1 - eta) * softmax(weights) + eta / K`, computed with the max subtracted.
pub fn mixed_softmax<T: Real>(weights: &[T], eta: T) -> Result<Vec<T>, BanditError> {
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(BanditError::NonFiniteWeight(i));
    }
    let k = T::from_usize(weights.len()).expect("length fits scalar");
    let max = weights.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = weights.iter().map(|&w| (w - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| (T::one() - eta) * e / total + eta / k).collect())
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_index<T: Real, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::lit(rng.gen::<f64>());
    let mut acc = T::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState<T> {
    pub live_cluster_weights: Vec<T>,
    /// Row-major `n_clusters x n_arms`.
    pub live_arm_weights: Vec<Vec<T>>,
    pub target_cluster_weights: Vec<T>,
    pub target_arm_weights: Vec<Vec<T>>,
    /// Episodes fed back so far.
    pub episode_counter: u64,
    /// `(R_min, R_max)` of absolute raw rewards seen so far.
    pub reward_extrema: Option<(T, T)>,
    /// Sum of increments accumulated into the target since the last sync.
    pub pending_cluster: Vec<T>,
    pub pending_arm: Vec<Vec<T>>,
}

impl<T: Real> BanditState<T> {
    fn new(config: &BanditConfig<T>) -> Self {
        let w = config.initial_weight;
        let cl = vec![w; config.n_clusters];
        let arms = vec![vec![w; config.n_arms]; config.n_clusters];
        Self {
            live_cluster_weights: cl.clone(),
            live_arm_weights: arms.clone(),
            target_cluster_weights: cl,
            target_arm_weights: arms,
            episode_counter: 0,
            reward_extrema: None,
            pending_cluster: vec![T::zero(); config.n_clusters],
            pending_arm: vec![vec![T::zero(); config.n_arms]; config.n_clusters],
        }
    }
}

/// Output of rescaling one raw episode reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledReward<T> {
    pub r_md: T,
    pub r_norm: T,
    pub cluster: T,
    pub arm: T,
}

/// Everything the bandit did with one episode's feedback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feedback<T> {
    pub index: CurriculumIndex,
    pub p_cluster: T,
    pub p_arm: T,
    pub rescaled: RescaledReward<T>,
    /// Whether this episode closed a sync window.
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilevelBandit<T> {
    pub config: BanditConfig<T>,
    pub state: BanditState<T>,
}

impl<T: Real> BilevelBandit<T> {
    pub fn new(config: BanditConfig<T>) -> Result<Self, BanditError> {
        config.validate()?;
        let state = BanditState::new(&config);
        Ok(Self { config, state })
    }

    fn check_index(&self, index: CurriculumIndex) -> Result<(), BanditError> {
        if index.cluster >= self.config.n_clusters {
            return Err(BanditError::ClusterOutOfRange {
                cluster: index.cluster,
                n_clusters: self.config.n_clusters,
            });
        }
        if index.arm >= self.config.n_arms {
            return Err(BanditError::ArmOutOfRange { arm: index.arm, n_arms: self.config.n_arms });
        }
        Ok(())
    }

    /// Sampling distribution over clusters from the live weights.
    pub fn cluster_probabilities(&self) -> Result<Vec<T>, BanditError> {
        mixed_softmax(&self.state.live_cluster_weights, self.config.eta)
    }

    /// Sampling distribution over the arms of `cluster` from the live weights.
    pub fn arm_probabilities(&self, cluster: usize) -> Result<Vec<T>, BanditError> {
        let row = self.state.live_arm_weights.get(cluster).ok_or(BanditError::ClusterOutOfRange {
            cluster,
            n_clusters: self.config.n_clusters,
        })?;
        mixed_softmax(row, self.config.eta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CurriculumIndex, BanditError> {
        let pc = self.cluster_probabilities()?;
        let cluster = sample_index(&pc, rng);
        let pa = self.arm_probabilities(cluster)?;
        let arm = sample_index(&pa, rng);
        Ok(CurriculumIndex { cluster, arm })
    }

    /// Maps a raw episode reward to the importance-weighted bandit rewards and
    /// records its magnitude in the reward history.
    ///
    /// Negative rewards are folded onto the positive axis (`-alpha_md * r`), so
    /// badly failed curricula look as informative as highly rewarded ones. With
    /// no spread in the history yet, the normalised reward is 0.
    pub fn rescale_reward(&mut self, raw: T, p_cluster: T, p_arm: T) -> RescaledReward<T> {
        let c = &self.config;
        let mag = raw.abs();
        let (lo, hi) = match self.state.reward_extrema {
            None => (mag, mag),
            Some((lo, hi)) => (lo.min(mag), hi.max(mag)),
        };
        self.state.reward_extrema = Some((lo, hi));

        let r_md = if raw >= T::zero() { raw } else { -c.alpha_md * raw };
        let denom = c.k1 * hi - c.k0 * lo;
        let r_norm = if denom > T::zero() {
            let two = T::lit(2.0);
            (two * (r_md - c.k0 * lo) / denom - T::one()).max(-T::one()).min(T::one())
        } else {
            T::zero()
        };
        RescaledReward { r_md, r_norm, cluster: r_norm / p_cluster, arm: r_norm / p_arm }
    }

    /// Adds one episode's increment to the target weights of the sampled cluster
    /// and arm. The drift terms use the target sums before the increment.
    pub fn accumulate(
        &mut self,
        index: CurriculumIndex,
        r_hat_cluster: T,
        r_hat_arm: T,
    ) -> Result<(), BanditError> {
        self.check_index(index)?;
        let c = &self.config;
        let s = &mut self.state;
        let w_c: T = s.target_cluster_weights.iter().copied().sum();
        let w_a: T = s.target_arm_weights[index.cluster].iter().copied().sum();
        let dc = c.alpha_c * r_hat_cluster + c.beta_c * w_c;
        let da = c.alpha_a * r_hat_arm + c.beta_a * w_a;
        s.target_cluster_weights[index.cluster] += dc;
        s.target_arm_weights[index.cluster][index.arm] += da;
        s.pending_cluster[index.cluster] += dc;
        s.pending_arm[index.cluster][index.arm] += da;
        Ok(())
    }

    /// Copies target weights into the live weights. Only legal at episodes that
    /// are multiples of the sync interval.
    pub fn sync_target(&mut self) -> Result<(), BanditError> {
        let interval = self.config.sync_interval;
        let episode = self.state.episode_counter;
        if episode % interval != 0 {
            return Err(BanditError::OffScheduleSync { episode, interval });
        }
        let lim = self.config.weight_limit;
        let clamp = |w: &mut T| *w = w.max(-lim).min(lim);
        let s = &mut self.state;
        s.target_cluster_weights.iter_mut().for_each(clamp);
        s.target_arm_weights.iter_mut().flatten().for_each(clamp);
        s.live_cluster_weights.clone_from(&s.target_cluster_weights);
        s.live_arm_weights.clone_from(&s.target_arm_weights);
        s.pending_cluster.iter_mut().for_each(|p| *p = T::zero());
        s.pending_arm.iter_mut().flatten().for_each(|p| *p = T::zero());
        Ok(())
    }

    /// Feeds back the raw reward of an episode played on `index`: rescale,
    /// accumulate into the target, advance the episode counter, and sync when
    /// the counter reaches a multiple of the interval.
    pub fn observe(&mut self, index: CurriculumIndex, raw_reward: T) -> Result<Feedback<T>, BanditError> {
        self.check_index(index)?;
        let p_cluster = self.cluster_probabilities()?[index.cluster];
        let p_arm = self.arm_probabilities(index.cluster)?[index.arm];
        let rescaled = self.rescale_reward(raw_reward, p_cluster, p_arm);
        self.accumulate(index, rescaled.cluster, rescaled.arm)?;
        self.state.episode_counter += 1;
        let synced = self.state.episode_counter % self.config.sync_interval == 0;
        if synced {
            self.sync_target()?;
        }
        Ok(Feedback { index, p_cluster, p_arm, rescaled, synced })
    }

    pub fn live_argmax_cluster(&self) -> usize {
        argmax(&self.state.live_cluster_weights)
    }
}

pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Curriculum scheduling policy used for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// The two-level bandit.
    Bimab,
    /// Always the maximum cluster, uniform arm.
    Fixed,
    /// Uniform over all curricula.
    Random,
    /// Cluster grows on a fixed episode schedule, uniform arm.
    Manual,
}

impl std::str::FromStr for SchedulerKind {
    type Err = BanditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bimab" => Ok(Self::Bimab),
            "fixed" => Ok(Self::Fixed),
            "random" => Ok(Self::Random),
            "manual" | "manual_staged" => Ok(Self::Manual),
            other => Err(BanditError::UnknownScheduler(other.to_string())),
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Bimab => "bimab",
            Self::Fixed => "fixed",
            Self::Random => "random",
            Self::Manual => "manual",
        };
        f.write_str(s)
    }
}

/// Non-adaptive schedulers used as baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineScheduler {
    Fixed { n_clusters: usize, n_arms: usize },
    Random { n_clusters: usize, n_arms: usize },
    /// `stage_lengths[i]` episodes are spent on cluster `i`; after the last
    /// stage the final cluster is kept.
    Manual { stage_lengths: Vec<u64>, n_arms: usize },
}

impl BaselineScheduler {
    pub fn new(
        kind: SchedulerKind,
        n_clusters: usize,
        n_arms: usize,
        stage_lengths: Vec<u64>,
    ) -> Result<Self, BanditError> {
        match kind {
            SchedulerKind::Fixed => Ok(Self::Fixed { n_clusters, n_arms }),
            SchedulerKind::Random => Ok(Self::Random { n_clusters, n_arms }),
            SchedulerKind::Manual => {
                if stage_lengths.len() != n_clusters {
                    return Err(BanditError::InvalidConfig(format!(
                        "manual schedule needs {n_clusters} stage lengths, got {}",
                        stage_lengths.len()
                    )));
                }
                Ok(Self::Manual { stage_lengths, n_arms })
            }
            SchedulerKind::Bimab => Err(BanditError::UnknownScheduler("bimab is not a baseline".into())),
        }
    }

    /// Equal stages covering `total_episodes`.
    pub fn equal_stages(n_clusters: usize, total_episodes: u64) -> Vec<u64> {
        let len = (total_episodes / n_clusters as u64).max(1);
        vec![len; n_clusters]
    }

    pub fn sample<R: Rng + ?Sized>(&self, episode: u64, rng: &mut R) -> CurriculumIndex {
        match self {
            Self::Fixed { n_clusters, n_arms } => CurriculumIndex::new(n_clusters - 1, rng.gen_range(0..*n_arms)),
            Self::Random { n_clusters, n_arms } => {
                let cluster = rng.gen_range(0..*n_clusters);
                CurriculumIndex::new(cluster, rng.gen_range(0..*n_arms))
            }
            Self::Manual { stage_lengths, n_arms } => {
                let mut end = 0u64;
                let mut cluster = stage_lengths.len() - 1;
                for (i, len) in stage_lengths.iter().enumerate() {
                    end += len;
                    if episode < end {
                        cluster = i;
                        break;
                    }
                }
                CurriculumIndex::new(cluster, rng.gen_range(0..*n_arms))
            }
        }
    }
}
