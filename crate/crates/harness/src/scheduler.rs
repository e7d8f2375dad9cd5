//! Uniform front over the bandit and the baseline schedulers.

use bimab_core::bandit::{BanditError, BaselineScheduler, BilevelBandit, CurriculumIndex, Feedback, SchedulerKind};
use bimab_core::BanditConfig;
use rand::Rng;

use crate::trace::WeightSnapshot;

#[derive(Debug, Clone)]
pub enum Scheduler {
    Bimab(BilevelBandit<f64>),
    Baseline(BaselineScheduler),
}

impl Scheduler {
    /// `stages` is only used by the manual scheduler; `None` splits `t_max`
    /// into equal stages.
    pub fn new(
        kind: SchedulerKind,
        bandit: &BanditConfig,
        stages: Option<Vec<u64>>,
        t_max: u64,
    ) -> Result<Self, BanditError> {
        match kind {
            SchedulerKind::Bimab => Ok(Self::Bimab(BilevelBandit::new(bandit.clone())?)),
            _ => {
                let stages = stages.unwrap_or_else(|| BaselineScheduler::equal_stages(bandit.n_clusters, t_max));
                Ok(Self::Baseline(BaselineScheduler::new(kind, bandit.n_clusters, bandit.n_arms, stages)?))
            }
        }
    }

    /// Curriculum for the episode with 0-based index `episode`.
    pub fn sample<R: Rng + ?Sized>(&self, episode: u64, rng: &mut R) -> Result<CurriculumIndex, BanditError> {
        match self {
            Self::Bimab(b) => b.sample(rng),
            Self::Baseline(s) => Ok(s.sample(episode, rng)),
        }
    }

    /// Reports the raw reward of the episode played on `index`.
    pub fn observe(&mut self, index: CurriculumIndex, raw: f64) -> Result<Option<Feedback<f64>>, BanditError> {
        match self {
            Self::Bimab(b) => b.observe(index, raw).map(Some),
            Self::Baseline(_) => Ok(None),
        }
    }

    pub fn snapshot(&self) -> Option<WeightSnapshot> {
        match self {
            Self::Bimab(b) => Some(WeightSnapshot::of(b)),
            Self::Baseline(_) => None,
        }
    }

    pub fn bandit(&self) -> Option<&BilevelBandit<f64>> {
        match self {
            Self::Bimab(b) => Some(b),
            Self::Baseline(_) => None,
        }
    }
}
