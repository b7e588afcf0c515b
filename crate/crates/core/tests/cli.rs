use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[sim]
n_target = 3

[learner]
episodes = 2
n_train = 3
hidden = [6]
batch_size = 8
warmup = 8
seeds = 1

[eval]
populations = [2, 4]
"#;

fn v2v(root: &Path, args: &[&str]) -> Output {
    let config = root.join("cfg.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Command::new(env!("CARGO_BIN_EXE_v2v"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(root.join("runs"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn train_eval_sweep_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&v2v(root, &["train", "--mechanism", "double_auction", "--seeds", "0"]));
    let run = root.join("runs/double_auction/full/seed0");
    for f in ["checkpoint.json", "learning_curve.csv", "metadata.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ck = run.join("checkpoint.json");
    let ck = ck.to_str().unwrap();

    let stdout = ok(&v2v(root, &["eval", "--checkpoint", ck, "--seeds", "0"]));
    assert!(stdout.contains("16 steps"));
    let steps = root.join("runs/eval/double_auction/full/n3_seed0/steps.csv");
    assert_eq!(std::fs::read_to_string(steps).unwrap().lines().count(), 17);

    ok(&v2v(root, &["eval", "--checkpoint", ck, "--horizon", "thirty-day", "--steps", "32", "--mechanism", "nash"]));
    assert!(root.join("runs/eval/nash/full/n3_seed0/steps.csv").exists());

    ok(&v2v(root, &["sweep", "--checkpoint", ck, "--steps", "8", "--seeds", "0,1"]));
    let sweep = std::fs::read_to_string(root.join("runs/sweep/double_auction/full/sweep_summary.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2);

    let stdout = ok(&v2v(root, &["plot-data"]));
    assert!(stdout.contains("plot_learning_curve.csv") && stdout.contains("plot_intraday_volume.csv"));
}

#[test]
fn rerun_from_metadata_reproduces_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&v2v(root, &["train", "--no-price-prox", "--seeds", "4"]));
    let run = root.join("runs/nash/no_price_prox/seed4");
    let meta = run.join("metadata.json");
    let again = root.join("again");
    let out = Command::new(env!("CARGO_BIN_EXE_v2v"))
        .args(["--out", again.to_str().unwrap(), "train", "--from-metadata", meta.to_str().unwrap()])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        std::fs::read(run.join("learning_curve.csv")).unwrap(),
        std::fs::read(again.join("learning_curve.csv")).unwrap()
    );
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = v2v(root, &["train", "--mechanism", "barter"]);
    assert!(!out.status.success());

    let out = v2v(root, &["eval", "--checkpoint", "/nonexistent/ck.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));

    let out = v2v(root, &["plot-data", root.join("empty").to_str().unwrap()]);
    assert!(!out.status.success());

    std::fs::write(root.join("bad.toml"), "[sim]\nprice_min = 0.9\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_v2v"))
        .args(["--config", root.join("bad.toml").to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn shipped_example_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    for profile in [v2v_core::harness::Profile::Desk, v2v_core::harness::Profile::Large] {
        let cfg = v2v_core::harness::ExperimentConfig::load(&path, profile).unwrap();
        assert_eq!(cfg.sim.n_target, 10);
        assert_eq!(cfg.learner.checkpoint_every, 100);
    }
}
