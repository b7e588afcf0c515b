//! Command-line entry point: train, eval, sweep, ablate, plot-data.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use v2v_core::clearing::Mechanism;
use v2v_core::harness::{
    emit_plot_data, run_ablation, run_dir, run_evaluation, run_sweep, run_training, ExperimentConfig, HarnessError,
    Mode, Profile, RunMetadata, RunSpec, ABLATION_VARIANTS, OUTPUT_ROOT_ENV,
};
use v2v_core::learner::Checkpoint;
use v2v_core::rewards::Ablation;

#[derive(Parser)]
#[command(name = "v2v", version, about = "V2V energy trading experiments")]
struct Cli {
    /// Built-in defaults the config file is layered on.
    #[arg(long, global = true, default_value = "desk")]
    profile: Profile,
    /// TOML file overriding profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; defaults to $V2V_OUTPUT_ROOT, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Train one shared policy per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint without exploration noise.
    Eval(EvalArgs),
    /// Evaluate a checkpoint across populations and seeds.
    Sweep(SweepArgs),
    /// Train and evaluate the full reward and each single-term removal.
    Ablate(AblateArgs),
    /// Aggregate learning curves and intra-day volume under a directory.
    PlotData {
        /// Directory to scan; defaults to the output root.
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Defaults to nash for training and to the checkpoint's mechanism otherwise.
    #[arg(long)]
    mechanism: Option<Mechanism>,
    /// Population target; defaults to the config's.
    #[arg(long)]
    n_agents: Option<usize>,
    /// Comma-separated seeds; defaults to 0..learner.seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    no_price_prox: bool,
    #[arg(long)]
    no_credit: bool,
    #[arg(long)]
    no_global: bool,
    /// Re-run exactly what a previous metadata.json describes.
    #[arg(long, conflicts_with_all = ["episodes", "no_price_prox", "no_credit", "no_global"])]
    from_metadata: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Horizon {
    OneDay,
    ThirtyDay,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum, default_value = "one-day")]
    horizon: Horizon,
    /// Overrides the horizon's step count.
    #[arg(long)]
    steps: Option<u32>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated populations; defaults to the config's.
    #[arg(long, value_delimiter = ',')]
    populations: Vec<usize>,
    #[arg(long)]
    steps: Option<u32>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<u32>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("checkpoint mechanism: {0}")]
    Mechanism(v2v_core::clearing::ClearingError),
    #[error("checkpoint ablation label {0:?} not recognized")]
    AblationLabel(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: v2v_core::learner::CheckpointError,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn output_root(cli: &Option<PathBuf>) -> PathBuf {
    cli.clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|source| CliError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

fn checkpoint_mechanism(flag: Option<Mechanism>, ck: &Checkpoint) -> Result<Mechanism, CliError> {
    match flag {
        Some(m) => Ok(m),
        None => ck.mechanism.parse().map_err(CliError::Mechanism),
    }
}

fn checkpoint_ablation(ck: &Checkpoint) -> Result<Ablation, CliError> {
    Ablation::from_label(&ck.ablation).ok_or_else(|| CliError::AblationLabel(ck.ablation.clone()))
}

fn seeds(run: &RunArgs, cfg: &ExperimentConfig) -> Vec<u64> {
    if run.seeds.is_empty() {
        (0..cfg.learner.seeds as u64).collect()
    } else {
        run.seeds.clone()
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.profile).map_err(HarnessError::from)?,
        None => ExperimentConfig::profile(cli.profile),
    };
    let root = output_root(&cli.out);
    match cli.verb {
        Verb::Train(args) => {
            if let Some(meta) = &args.from_metadata {
                let meta = RunMetadata::load(meta)?;
                let spec = RunSpec {
                    out_dir: cli.out.clone().unwrap_or(meta.spec.out_dir.clone()),
                    ..meta.spec
                };
                run_training(&meta.config, &spec, meta.seed, true)?;
                println!("{}", spec.out_dir.display());
                return Ok(());
            }
            if let Some(e) = args.episodes {
                cfg.learner.episodes = e;
            }
            let ablation = Ablation {
                no_price_prox: args.no_price_prox,
                no_credit: args.no_credit,
                no_global: args.no_global,
            };
            let mechanism = args.run.mechanism.unwrap_or(Mechanism::Nash);
            let n_agents = args.run.n_agents.unwrap_or(cfg.sim.n_target);
            let seeds = seeds(&args.run, &cfg);
            seeds.par_iter().try_for_each(|&seed| {
                let spec = RunSpec {
                    mode: Mode::Train,
                    mechanism,
                    ablation,
                    n_agents,
                    seeds: vec![seed],
                    out_dir: run_dir(&root, mechanism, ablation, seed),
                    checkpoint: None,
                };
                let out = run_training(&cfg, &spec, seed, true)?;
                let last = out.logs.last();
                println!(
                    "{} seed {seed}: {} episodes, final mean reward {:.4}",
                    spec.out_dir.display(),
                    out.logs.len(),
                    last.map_or(0.0, |l| l.mean_reward)
                );
                Ok::<_, HarnessError>(())
            })?;
        }
        Verb::Eval(args) => {
            let ck = load_checkpoint(&args.checkpoint)?;
            let mechanism = checkpoint_mechanism(args.run.mechanism, &ck)?;
            let (mode, default_steps) = match args.horizon {
                Horizon::OneDay => (Mode::Eval1Day, cfg.eval.one_day_steps),
                Horizon::ThirtyDay => (Mode::Eval30Day, cfg.eval.thirty_day_steps),
            };
            let ablation = checkpoint_ablation(&ck)?;
            let steps = args.steps.unwrap_or(default_steps);
            let n_agents = args.run.n_agents.unwrap_or(cfg.sim.n_target);
            for seed in seeds(&args.run, &cfg) {
                let spec = RunSpec {
                    mode,
                    mechanism,
                    ablation,
                    n_agents,
                    seeds: vec![seed],
                    out_dir: root
                        .join("eval")
                        .join(mechanism.name())
                        .join(ablation.label())
                        .join(format!("n{n_agents}_seed{seed}")),
                    checkpoint: Some(args.checkpoint.clone()),
                };
                let s = run_evaluation(&cfg, &spec, &ck.actor, seed, steps, true)?.summary;
                println!(
                    "{}: {steps} steps, SW {:.3}, volume {:.2} kWh, median Jain's {:.3}, median P_match {:.3}",
                    spec.out_dir.display(),
                    s.sw_total,
                    s.volume_total,
                    s.jains_median,
                    s.p_match_median
                );
            }
        }
        Verb::Sweep(args) => {
            let ck = load_checkpoint(&args.checkpoint)?;
            let mechanism = checkpoint_mechanism(args.run.mechanism, &ck)?;
            if !args.populations.is_empty() {
                cfg.eval.populations = args.populations.clone();
            }
            let ablation = checkpoint_ablation(&ck)?;
            let spec = RunSpec {
                mode: Mode::Sweep,
                mechanism,
                ablation,
                n_agents: cfg.sim.n_target,
                seeds: seeds(&args.run, &cfg),
                out_dir: root.join("sweep").join(mechanism.name()).join(ablation.label()),
                checkpoint: Some(args.checkpoint.clone()),
            };
            let rows = run_sweep(&cfg, &spec, &ck.actor, args.steps.unwrap_or(cfg.eval.thirty_day_steps), true)?;
            println!("{}: {} runs", spec.out_dir.display(), rows.len());
        }
        Verb::Ablate(args) => {
            if let Some(e) = args.episodes {
                cfg.learner.episodes = e;
            }
            let mechanism = args.run.mechanism.unwrap_or(Mechanism::Nash);
            let spec = RunSpec {
                mode: Mode::Ablate,
                mechanism,
                ablation: Ablation::FULL,
                n_agents: args.run.n_agents.unwrap_or(cfg.sim.n_target),
                seeds: seeds(&args.run, &cfg),
                out_dir: root.join("ablate").join(mechanism.name()),
                checkpoint: None,
            };
            let steps = args.steps.unwrap_or(cfg.eval.thirty_day_steps);
            for row in run_ablation(&cfg, &spec, &ABLATION_VARIANTS, steps, true)? {
                println!(
                    "{} seed {}: SW {:.3}, late reward variance {:.3e}",
                    row.variant, row.seed, row.sw_total, row.late_reward_variance
                );
            }
        }
        Verb::PlotData { dir } => {
            let dir = dir.unwrap_or(root);
            let files = emit_plot_data(&dir, cfg.sim.steps_per_day)?;
            for f in [files.learning_curve, files.intraday_volume].into_iter().flatten() {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}
