use std::path::{Path, PathBuf};
use v2v_core::clearing::Mechanism;
use v2v_core::harness::{
    emit_plot_data, run_ablation, run_evaluation, run_sweep, run_training, BandRow, ExperimentConfig, IntradayRow, Mode,
    Profile, RunSpec, TrainOutcome, SWEEP_POPULATIONS,
};
use v2v_core::rewards::Ablation;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.sim.n_target = 3;
    cfg.learner.episodes = 3;
    cfg.learner.n_train = 3;
    cfg.learner.hidden = vec![6];
    cfg.learner.batch_size = 8;
    cfg.learner.warmup = 8;
    cfg
}

fn spec(mode: Mode, ablation: Ablation, out: &Path) -> RunSpec {
    RunSpec {
        mode,
        mechanism: Mechanism::Nash,
        ablation,
        n_agents: 3,
        seeds: vec![0, 1, 2],
        out_dir: out.to_path_buf(),
        checkpoint: None,
    }
}

fn train(cfg: &ExperimentConfig, ablation: Ablation, out: &Path) -> TrainOutcome {
    run_training(cfg, &spec(Mode::Train, ablation, out), 0, true).unwrap()
}

fn rows<T: for<'de> serde::Deserialize<'de>>(path: PathBuf) -> Vec<T> {
    csv::Reader::from_path(path).unwrap().deserialize().map(Result::unwrap).collect()
}

#[test]
fn evaluation_horizons_write_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let actor = train(&cfg, Ablation::FULL, &dir.path().join("train")).checkpoint.actor;
    for (mode, steps) in [(Mode::Eval1Day, 16), (Mode::Eval30Day, 480)] {
        let out = dir.path().join(format!("{mode:?}"));
        let o = run_evaluation(&cfg, &spec(mode, Ablation::FULL, &out), &actor, 0, steps, true).unwrap();
        assert_eq!(o.records.len(), steps as usize);
        let csv: Vec<v2v_core::metrics::MetricsRecord> = rows(out.join("steps.csv"));
        assert_eq!(csv, o.records);
        assert!(out.join("summary.csv").exists() && out.join("metadata.json").exists());
    }
}

#[test]
fn default_sweep_covers_every_population_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let actor = train(&cfg, Ablation::FULL, &dir.path().join("train")).checkpoint.actor;
    let out = dir.path().join("sweep");
    let summary = run_sweep(&cfg, &spec(Mode::Sweep, Ablation::FULL, &out), &actor, 4, true).unwrap();
    assert_eq!(summary.len(), SWEEP_POPULATIONS.len() * 3);
    let pops: Vec<usize> = summary.iter().map(|s| s.population).collect();
    assert!(pops.windows(2).all(|w| w[0] <= w[1]));
    let csv: Vec<v2v_core::harness::RunSummary> = rows(out.join("sweep_summary.csv"));
    assert_eq!(csv.len(), 24);
}

#[test]
fn plot_data_bands_and_intraday_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    for seed in 0..2 {
        let out = dir.path().join(format!("seed{seed}"));
        let t = run_training(&cfg, &RunSpec { seeds: vec![seed], ..spec(Mode::Train, Ablation::FULL, &out) }, seed, true)
            .unwrap();
        let eval = out.join("eval");
        run_evaluation(&cfg, &spec(Mode::Eval30Day, Ablation::FULL, &eval), &t.checkpoint.actor, seed, 48, true).unwrap();
    }
    let files = emit_plot_data(dir.path(), 16).unwrap();
    let band: Vec<BandRow> = rows(files.learning_curve.unwrap());
    assert_eq!(band.len(), 3);
    for r in &band {
        assert_eq!(r.runs, 2);
        assert!(r.reward_p25 <= r.reward_median && r.reward_median <= r.reward_p75);
    }
    let intraday: Vec<IntradayRow> = rows(files.intraday_volume.unwrap());
    assert_eq!(intraday.iter().map(|r| r.step_of_day).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
    // two runs of three days each
    assert!(intraday.iter().all(|r| r.samples == 6));
}

#[test]
fn plot_data_needs_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plot_data(dir.path(), 16).is_err());
}

#[test]
fn removing_price_proximity_zeroes_the_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let ablation = Ablation {
        no_price_prox: true,
        ..Ablation::FULL
    };
    let logs = train(&cfg, ablation, dir.path()).logs;
    assert!(logs.iter().all(|l| l.price_prox == 0.0));
    let full = train(&cfg, Ablation::FULL, &dir.path().join("full")).logs;
    assert!(full.iter().any(|l| l.price_prox < 0.0));
}

#[test]
fn smallest_run_is_deterministic() {
    let mut cfg = tiny();
    cfg.learner.episodes = 1;
    cfg.sim.n_target = 2;
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let s = |p: &Path| RunSpec {
        n_agents: 2,
        ..spec(Mode::Train, Ablation::FULL, p)
    };
    let a = run_training(&cfg, &s(one.path()), 5, true).unwrap();
    let b = run_training(&cfg, &s(two.path()), 5, true).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.checkpoint, b.checkpoint);
    for f in ["learning_curve.csv", "checkpoint.json"] {
        assert_eq!(std::fs::read(one.path().join(f)).unwrap(), std::fs::read(two.path().join(f)).unwrap());
    }
}

#[test]
fn ablation_reports_every_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let variants = v2v_core::harness::ABLATION_VARIANTS;
    let out = run_ablation(&cfg, &spec(Mode::Ablate, Ablation::FULL, dir.path()), &variants, 16, true).unwrap();
    assert_eq!(out.len(), variants.len() * 3);
    let labels: std::collections::BTreeSet<&str> = out.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(labels.len(), variants.len());
    assert!(dir.path().join("ablation_summary.csv").exists());
}
