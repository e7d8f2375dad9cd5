//! Evaluation matrix: success, collision and timeout rates per (task, SV count).

use bimab_core::bandit::CurriculumIndex;
use bimab_core::env::{IntersectionEnv, TaskType};
use bimab_core::ppo::ActMode;
use bimab_core::{ActorCritic, MpcConfig};
use bimab_core::env::EnvConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::trace::Outcome;
use crate::train::{run_episode, TrainError};

/// Plays one seeded evaluation episode. Implementations must be deterministic
/// in `(curriculum, seed)`.
pub trait EpisodeRunner: Sync {
    fn run(&self, curriculum: CurriculumIndex, seed: u64) -> Result<EvalEpisode, TrainError>;
}

/// Greedy rollout of a policy in the intersection simulator.
pub struct PolicyRunner {
    pub policy: ActorCritic,
    pub env: EnvConfig,
    pub mpc: MpcConfig,
}

impl PolicyRunner {
    pub fn new(policy: ActorCritic, env: EnvConfig, mpc: MpcConfig) -> Result<Self, TrainError> {
        let expected = (env.n_sv_max + 1) * bimab_core::env::observation::FEATURES;
        if policy.obs_dim() != expected {
            return Err(TrainError::Config(format!(
                "checkpoint expects {} observation features, environment produces {expected}",
                policy.obs_dim()
            )));
        }
        Ok(Self { policy, env, mpc })
    }
}

impl EpisodeRunner for PolicyRunner {
    fn run(&self, curriculum: CurriculumIndex, seed: u64) -> Result<EvalEpisode, TrainError> {
        let mut env = IntersectionEnv::new(self.env.clone(), self.mpc.clone())?;
        let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
        // greedy acting never draws from this stream
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = run_episode(&mut env, &self.policy, curriculum, ActMode::Greedy, &mut env_rng, &mut policy_rng)?;
        Ok(EvalEpisode {
            task: curriculum.arm,
            n_sv: curriculum.cluster,
            episode: 0,
            seed,
            outcome: ep.outcome,
            steps: ep.sim_steps as u64,
            total_reward: ep.total_reward,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEpisode {
    pub task: usize,
    pub n_sv: usize,
    pub episode: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: u64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub task: usize,
    pub n_sv: usize,
    pub episodes: usize,
    pub success: usize,
    pub collision: usize,
    pub timeout: usize,
}

impl Cell {
    fn pct(&self, k: usize) -> f64 {
        100.0 * k as f64 / self.episodes as f64
    }

    pub fn success_pct(&self) -> f64 {
        self.pct(self.success)
    }

    pub fn collision_pct(&self) -> f64 {
        self.pct(self.collision)
    }

    pub fn timeout_pct(&self) -> f64 {
        self.pct(self.timeout)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationMatrix {
    pub cells: Vec<Cell>,
}

impl EvaluationMatrix {
    pub fn cell(&self, task: TaskType, n_sv: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.task == task.index() && c.n_sv == n_sv)
    }

    /// Mean success percentage over all tasks at one SV count.
    pub fn mean_success(&self, n_sv: usize) -> f64 {
        let cells: Vec<&Cell> = self.cells.iter().filter(|c| c.n_sv == n_sv).collect();
        if cells.is_empty() {
            return 0.0;
        }
        cells.iter().map(|c| c.success_pct()).sum::<f64>() / cells.len() as f64
    }

    /// Aligned text table, one row per task, S/C/TO columns per SV count.
    pub fn render(&self) -> String {
        let mut n_svs: Vec<usize> = self.cells.iter().map(|c| c.n_sv).collect();
        n_svs.sort_unstable();
        n_svs.dedup();
        let mut out = format!("{:<14}", "task");
        for n in &n_svs {
            out += &format!(" | N_sv={n:<13}");
        }
        out += "\n";
        out += &format!("{:<14}", "");
        for _ in &n_svs {
            out += &format!(" | {:>5} {:>5} {:>5}", "S", "C", "TO");
        }
        out += "\n";
        for task in TaskType::ALL {
            out += &format!("{:<14}", task.name());
            for &n in &n_svs {
                match self.cell(task, n) {
                    Some(c) => {
                        out += &format!(" | {:>5.1} {:>5.1} {:>5.1}", c.success_pct(), c.collision_pct(), c.timeout_pct())
                    }
                    None => out += &format!(" | {:>17}", "-"),
                }
            }
            out += "\n";
        }
        out
    }
}

/// Runs `episodes` seeded episodes in every (task, SV count) cell, cells in
/// parallel. Episode seeds depend only on `seed` and the cell, so the matrix is
/// the same for any thread count.
pub fn evaluate<R: EpisodeRunner>(
    runner: &R,
    n_sv_max: usize,
    episodes: usize,
    seed: u64,
) -> Result<(EvaluationMatrix, Vec<EvalEpisode>), TrainError> {
    let cells: Vec<CurriculumIndex> = (0..=n_sv_max)
        .flat_map(|n| TaskType::ALL.iter().map(move |t| CurriculumIndex::new(n, t.index())))
        .collect();
    let results: Vec<Result<(Cell, Vec<EvalEpisode>), TrainError>> = cells
        .par_iter()
        .enumerate()
        .map(|(k, &idx)| {
            let mut seeds = ChaCha8Rng::seed_from_u64(seed);
            seeds.set_stream(k as u64);
            let mut cell =
                Cell { task: idx.arm, n_sv: idx.cluster, episodes, success: 0, collision: 0, timeout: 0 };
            let mut records = Vec::with_capacity(episodes);
            for e in 0..episodes {
                let mut rec = runner.run(idx, seeds.gen())?;
                rec.episode = e;
                match rec.outcome {
                    Outcome::Success => cell.success += 1,
                    Outcome::Collision => cell.collision += 1,
                    Outcome::Timeout => cell.timeout += 1,
                }
                records.push(rec);
            }
            Ok((cell, records))
        })
        .collect();
    let mut matrix = EvaluationMatrix { cells: Vec::with_capacity(cells.len()) };
    let mut all = Vec::new();
    for r in results {
        let (cell, recs) = r?;
        matrix.cells.push(cell);
        all.extend(recs);
    }
    Ok((matrix, all))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Always(Outcome);

    impl EpisodeRunner for Always {
        fn run(&self, c: CurriculumIndex, seed: u64) -> Result<EvalEpisode, TrainError> {
            Ok(EvalEpisode { task: c.arm, n_sv: c.cluster, episode: 0, seed, outcome: self.0, steps: 1, total_reward: 0.0 })
        }
    }

    /// Outcome drawn from the seed, to exercise the bookkeeping.
    struct BySeed;

    impl EpisodeRunner for BySeed {
        fn run(&self, c: CurriculumIndex, seed: u64) -> Result<EvalEpisode, TrainError> {
            let outcome = [Outcome::Success, Outcome::Collision, Outcome::Timeout][(seed % 3) as usize];
            Ok(EvalEpisode { task: c.arm, n_sv: c.cluster, episode: 0, seed, outcome, steps: 1, total_reward: 0.0 })
        }
    }

    #[test]
    fn forced_success_is_all_success() {
        let (m, recs) = evaluate(&Always(Outcome::Success), 3, 1, 0).unwrap();
        assert_eq!(m.cells.len(), 12);
        assert_eq!(recs.len(), 12);
        for c in &m.cells {
            assert_eq!((c.success_pct(), c.collision_pct(), c.timeout_pct()), (100.0, 0.0, 0.0));
        }
    }

    #[test]
    fn percentages_partition() {
        let (m, _) = evaluate(&BySeed, 3, 37, 5).unwrap();
        for c in &m.cells {
            assert_eq!(c.success + c.collision + c.timeout, 37);
            assert!((c.success_pct() + c.collision_pct() + c.timeout_pct() - 100.0).abs() < 1e-9);
        }
        let (again, _) = evaluate(&BySeed, 3, 37, 5).unwrap();
        assert_eq!(m, again);
        assert!(m.render().lines().count() == 5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ActorCritic::new(8, &[4], [5, 5, 3], &mut rng);
        assert!(PolicyRunner::new(p, EnvConfig::default(), MpcConfig::default()).is_err());
    }
}
