use super::{create_dir, run_evaluation, run_training, write_csv, ExperimentConfig, HarnessError, Mode, RunSpec, RunSummary};
use super::late_reward_variance;
use crate::learner::Actor;
use crate::rewards::Ablation;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation_summary.csv";

/// The full model followed by one variant per removed reward term.
pub const ABLATION_VARIANTS: [Ablation; 4] = [
    Ablation::FULL,
    Ablation {
        no_price_prox: true,
        no_credit: false,
        no_global: false,
    },
    Ablation {
        no_price_prox: false,
        no_credit: true,
        no_global: false,
    },
    Ablation {
        no_price_prox: false,
        no_credit: false,
        no_global: true,
    },
];

/// Evaluates one actor at every configured population for every seed, one
/// run per worker. Rows come back ordered by population, then seed.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    actor: &Actor,
    steps: u32,
    write: bool,
) -> Result<Vec<RunSummary>, HarnessError> {
    let jobs: Vec<(usize, u64)> = cfg
        .eval
        .populations
        .iter()
        .flat_map(|&n| spec.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let run = RunSpec {
                mode: Mode::Sweep,
                n_agents: n,
                seeds: vec![seed],
                out_dir: spec.out_dir.join(format!("n{n}")).join(format!("seed{seed}")),
                ..spec.clone()
            };
            run_evaluation(cfg, &run, actor, seed, steps, write).map(|o| o.summary)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if write {
        create_dir(&spec.out_dir)?;
        write_csv(&spec.out_dir.join(SWEEP_SUMMARY_FILE), &rows)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub late_reward_mean: f64,
    pub late_reward_variance: f64,
    pub sw_total: f64,
    pub volume_total: f64,
    pub jains_median: f64,
    pub gini_median: f64,
    pub p_match_median: f64,
    pub price_mean: f64,
}

/// Trains each variant for each seed, then evaluates it for `steps` steps.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    variants: &[Ablation],
    steps: u32,
    write: bool,
) -> Result<Vec<AblationRow>, HarnessError> {
    let jobs: Vec<(Ablation, u64)> = variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(ablation, seed)| {
            let dir = spec.out_dir.join(ablation.label()).join(format!("seed{seed}"));
            let train = RunSpec {
                mode: Mode::Ablate,
                ablation,
                seeds: vec![seed],
                out_dir: dir.join("train"),
                ..spec.clone()
            };
            let trained = run_training(cfg, &train, seed, write)?;
            let eval = RunSpec {
                out_dir: dir.join("eval"),
                ..train
            };
            let s = run_evaluation(cfg, &eval, &trained.checkpoint.actor, seed, steps, write)?.summary;
            let frac = cfg.eval.late_fraction;
            Ok(AblationRow {
                variant: ablation.label(),
                seed,
                late_reward_mean: trained.late_mean_reward(frac),
                late_reward_variance: late_reward_variance(&trained.logs, frac),
                sw_total: s.sw_total,
                volume_total: s.volume_total,
                jains_median: s.jains_median,
                gini_median: s.gini_median,
                p_match_median: s.p_match_median,
                price_mean: s.price_mean,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    if write {
        create_dir(&spec.out_dir)?;
        write_csv(&spec.out_dir.join(ABLATION_SUMMARY_FILE), &rows)?;
    }
    Ok(rows)
}
