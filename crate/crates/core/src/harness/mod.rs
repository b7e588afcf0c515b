//! Experiment orchestration: training and evaluation loops, population
//! sweeps, ablations and plot-ready aggregation. Every run writes its
//! resolved configuration next to its outputs.

mod config;
mod eval;
mod plot;
mod sweep;
mod train;

pub use config::{EvalConfig, ExperimentConfig, HarnessConfigError, Profile, SWEEP_POPULATIONS};
pub use eval::{run_evaluation, summarize, EvalOutcome, RunSummary};
pub use plot::{emit_plot_data, BandRow, IntradayRow, PlotFiles};
pub use sweep::{run_ablation, run_sweep, AblationRow, ABLATION_VARIANTS};
pub use train::{late_reward_variance, run_training, EpisodeLog, TrainOutcome};

use crate::clearing::Mechanism;
use crate::env::EnvError;
use crate::learner::CheckpointError;
use crate::rewards::Ablation;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "V2V_OUTPUT_ROOT";
pub const METADATA_FILE: &str = "metadata.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LEARNING_CURVE_FILE: &str = "learning_curve.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error(transparent)]
    Config(#[from] HarnessConfigError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("{0} requires a checkpoint")]
    MissingCheckpoint(&'static str),
    #[error("no {what} found under {dir}")]
    MissingInputs { what: &'static str, dir: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval1Day,
    Eval30Day,
    Sweep,
    Ablate,
}

/// What to run; numeric settings live in the accompanying `ExperimentConfig`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    pub mechanism: Mechanism,
    pub ablation: Ablation,
    /// Target population for single runs.
    pub n_agents: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl RunSpec {
    pub fn checkpoint_for(&self, what: &'static str) -> Result<&Path, HarnessError> {
        self.checkpoint.as_deref().ok_or(HarnessError::MissingCheckpoint(what))
    }
}

/// Contents of `metadata.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub code_version: String,
    pub optimizer: String,
    pub seed: u64,
    pub spec: RunSpec,
    pub config: ExperimentConfig,
}

impl RunMetadata {
    pub fn new(spec: &RunSpec, seed: u64, config: &ExperimentConfig) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            optimizer: "adam(beta1=0.9, beta2=0.999, eps=1e-8)".to_string(),
            seed,
            spec: spec.clone(),
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(METADATA_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Generator purposes; each gets its own ChaCha stream under the run seed.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Stream {
    Fleet = 0,
    Init = 1,
    Noise = 2,
    Replay = 3,
    Clearing = 4,
    EvalFleet = 5,
    EvalClearing = 6,
}

pub(crate) fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

/// `<root>/<mechanism>/<ablation>/seed<k>`.
pub fn run_dir(root: &Path, mechanism: Mechanism, ablation: Ablation, seed: u64) -> PathBuf {
    root.join(mechanism.name()).join(ablation.label()).join(format!("seed{seed}"))
}
