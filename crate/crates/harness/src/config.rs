//! Run configuration: every tunable constant in one TOML document.

use std::path::{Path, PathBuf};

use bimab_core::bandit::SchedulerKind;
use bimab_core::env::EnvConfig;
use bimab_core::{BanditConfig, MpcConfig, PpoConfig};
use serde::{Deserialize, Serialize};

use crate::bandit_sim::SyntheticConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialise config: {0}")]
    Serialise(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scheduler: SchedulerKind,
    /// Training episodes.
    pub t_max: u64,
    /// Evaluation episodes per (task, SV count) cell.
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    /// Episodes between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Stage lengths of the manual scheduler; equal stages over `t_max` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_stages: Option<Vec<u64>>,
    pub bandit: BanditConfig,
    pub env: EnvConfig,
    pub mpc: MpcConfig,
    pub ppo: PpoConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scheduler: SchedulerKind::Bimab,
            t_max: 20_000,
            eval_episodes: 100,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_interval: 1000,
            manual_stages: None,
            bandit: BanditConfig::default(),
            env: EnvConfig::default(),
            mpc: MpcConfig::default(),
            ppo: PpoConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    /// Short runs for quick checks.
    pub fn smoke() -> Self {
        Self { t_max: 2_000, out_dir: PathBuf::from("runs/smoke"), ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.bandit.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mpc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ppo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.synthetic.validate(self.bandit.n_arms).map_err(ConfigError::Invalid)?;
        if self.bandit.n_clusters != self.env.n_sv_max + 1 {
            return bad(format!(
                "bandit.n_clusters ({}) must equal env.n_sv_max + 1 ({})",
                self.bandit.n_clusters,
                self.env.n_sv_max + 1
            ));
        }
        if self.bandit.n_arms != 3 {
            return bad("bandit.n_arms must be 3 (left turn, go straight, right turn)".into());
        }
        if let Some(stages) = &self.manual_stages {
            if stages.len() != self.bandit.n_clusters {
                return bad(format!("manual_stages needs {} entries", self.bandit.n_clusters));
            }
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::smoke().validate().unwrap();
    }

    #[test]
    fn dump_load_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.manual_stages = Some(vec![10, 20, 30, 40]);
        cfg.bandit.eta = 0.123456789012345;
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RunConfig::default().to_toml().unwrap();
        text = text.replacen("seed = 0", "seed = 0\nsede = 1", 1);
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Parse(_))));
        let text = RunConfig::default().to_toml().unwrap().replacen("[bandit]", "[bandit]\nalpha = 1.0", 1);
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn inconsistent_sizes_rejected() {
        let mut cfg = RunConfig::default();
        cfg.env.n_sv_max = 2;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }
}
