//! Experiment configuration: one TOML file with optional `[sim]`,
//! `[learner]`, `[rewards]` and `[eval]` tables. Omitted keys
//! fall back to the selected profile.

use crate::domain::{ConfigError, SimConfig};
use crate::learner::{LearnerConfig, LearnerConfigError};
use crate::rewards::RewardWeights;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Population sizes of a scalability sweep.
pub const SWEEP_POPULATIONS: [usize; 8] = [6, 10, 15, 20, 30, 50, 75, 100];

#[derive(Debug, thiserror::Error)]
pub enum HarnessConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Sim(#[from] ConfigError),
    #[error(transparent)]
    Learner(#[from] LearnerConfigError),
    #[error("unknown profile `{0}` (expected desk or large)")]
    UnknownProfile(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small networks and 300 episodes at N=6; minutes on one core.
    Desk,
    /// 2000 episodes at N=20 with 128x128 networks.
    Large,
}

impl FromStr for Profile {
    type Err = HarnessConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "large" => Ok(Profile::Large),
            other => Err(HarnessConfigError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub one_day_steps: u32,
    pub thirty_day_steps: u32,
    pub populations: Vec<usize>,
    /// Fraction of the final training episodes used for late-training statistics.
    pub late_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            one_day_steps: 16,
            thirty_day_steps: 480,
            populations: SWEEP_POPULATIONS.to_vec(),
            late_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub learner: LearnerConfig,
    pub rewards: RewardWeights,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                sim: SimConfig::default().with_population(6),
                learner: LearnerConfig {
                    episodes: 300,
                    n_train: 6,
                    hidden: vec![64, 64],
                    batch_size: 64,
                    ..LearnerConfig::default()
                },
                rewards: RewardWeights::default(),
                eval: EvalConfig::default(),
            },
            Profile::Large => Self {
                sim: SimConfig::default().with_population(20),
                learner: LearnerConfig::default(),
                rewards: RewardWeights::default(),
                eval: EvalConfig::default(),
            },
        }
    }

    /// Parses TOML on top of `profile`'s defaults: keys present in the file win.
    pub fn from_toml_str(text: &str, profile: Profile) -> Result<Self, toml::de::Error> {
        let base = toml::Value::try_from(Self::profile(profile)).expect("config serializes");
        let overlay: toml::Value = toml::from_str(text)?;
        merge(base, overlay).try_into()
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self, HarnessConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml_str(&text, profile).map_err(|source| HarnessConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessConfigError> {
        self.sim.validate()?;
        self.learner.validate()?;
        if !(0.0..=1.0).contains(&self.eval.late_fraction) {
            return Err(HarnessConfigError::Invalid("eval.late_fraction outside [0, 1]".into()));
        }
        let w = &self.rewards;
        for v in [w.alpha_r, w.w_price, w.kappa_price, w.mu, w.lambda_w, w.lambda_1, w.lambda_2] {
            if !(v >= 0.0) {
                return Err(HarnessConfigError::Invalid("reward weights must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: toml::Value, overlay: toml::Value) -> toml::Value {
    match (base, overlay) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, o) => o,
    }
}
