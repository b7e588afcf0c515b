//! Versioned JSON snapshot of trained networks.

use super::{Actor, Critic, LearnerConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mechanism: String,
    pub ablation: String,
    pub seed: u64,
    pub episode: usize,
    pub learner: LearnerConfig,
    pub actor: Actor,
    pub critic: Critic,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value)?;
        ck.check_shapes()?;
        Ok(ck)
    }

    fn check_shapes(&self) -> Result<(), CheckpointError> {
        let mut actor = vec![crate::env::OBS_DIM];
        actor.extend_from_slice(&self.learner.hidden);
        actor.push(super::ACT_DIM);
        if self.actor.net.sizes() != actor {
            return Err(CheckpointError::Shape(format!("actor {:?}, config implies {actor:?}", self.actor.net.sizes())));
        }
        let mut critic = vec![self.learner.n_train * super::SLOT_DIM];
        critic.extend_from_slice(&self.learner.hidden);
        critic.push(1);
        if self.critic.net.sizes() != critic || self.critic.slots != self.learner.n_train {
            return Err(CheckpointError::Shape(format!(
                "critic {:?}, config implies {critic:?}",
                self.critic.net.sizes()
            )));
        }
        for net in [&self.actor.net, &self.critic.net] {
            let expected: usize = net.sizes().windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if net.n_params() != expected {
                return Err(CheckpointError::Shape(format!("{} params for {:?}", net.n_params(), net.sizes())));
            }
        }
        Ok(())
    }
}
