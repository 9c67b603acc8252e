use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_gkae-covert");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).arg("--quiet").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SWARM: &str = r#"{"duration": 4.0}"#;
const DATASET: &str = r#"{"swarm": {"duration": 4.0}, "n_trajectories": 5, "train_fraction": 0.6}"#;
const TRAIN: &str = r#"{"tau": 3, "epochs_phase1": 3, "epochs_phase2": 3, "lr": 0.01, "batch_size": 8}"#;
const EVAL: &str = r#"{"covert": {"runs": 6, "horizon_s": 2.0}, "lambdas": [0.3, 0.9], "N": [3, 9]}"#;

/// Runs the whole pipeline into `root` and returns the paths of every CSV.
fn pipeline(root: &Path, cfg: &Path, seed: &str) -> Vec<PathBuf> {
    let data = root.join("data");
    let ckpt = root.join("model.json");
    let pred = root.join("pred.csv");
    let eval = root.join("eval");
    let dataset_cfg = write(cfg, "dataset.json", DATASET);
    let train_cfg = write(cfg, "train.json", TRAIN);
    let eval_cfg = write(cfg, "eval.json", EVAL);

    let o = run(&["dataset", "--config", s(&dataset_cfg), "--seed", seed, "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["train", "--config", s(&train_cfg), "--seed", seed, "--dataset", s(&data), "--out", s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = data.join("test/traj_00003.csv");
    let o = run(&[
        "predict", "--checkpoint", s(&ckpt), "--trajectory", s(&traj), "--horizon", "2", "--baseline", "--out", s(&pred),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["eval-covert", "--config", s(&eval_cfg), "--seed", seed, "--checkpoint", s(&ckpt), "--out", s(&eval)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let mut csvs = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                csvs.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    csvs.sort();
    csvs
}

#[test]
fn simulate_writes_every_frame_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "swarm.json", SWARM);
    let out = dir.path().join("traj.csv");
    let o = run(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 41 * 4 + 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("traj.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn pipeline_is_byte_identical_for_equal_seeds() {
    let cfg = TempDir::new().unwrap();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let files = pipeline(a.path(), cfg.path(), "11");
    assert_eq!(files, pipeline(b.path(), cfg.path(), "11"));
    assert!(files.iter().any(|p| p.ends_with("eval/aggregate.csv")));
    for f in &files {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f.display());
    }
    let agg = fs::read_to_string(a.path().join("eval/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2 * 2);
    assert_eq!(agg.lines().next().unwrap(), "lambda,N,L,H,P_det,eps_mean");
    let loss = fs::read_to_string(a.path().join("model.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 6);
    let eps = fs::read_to_string(a.path().join("pred.eps.csv")).unwrap();
    assert_eq!(eps.lines().count(), 1 + 2);

    let c = TempDir::new().unwrap();
    pipeline(c.path(), cfg.path(), "12");
    assert_ne!(
        fs::read(a.path().join("eval/aggregate.csv")).unwrap(),
        fs::read(c.path().join("eval/aggregate.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run(&["simulate", "--config", s(&missing), "--out", s(&out)])), 2);
    let bad = write(dir.path(), "bad.json", r#"{"swarm_size": 3}"#);
    assert_eq!(code(&run(&["simulate", "--config", s(&bad), "--out", s(&out)])), 2);
    let invalid = write(dir.path(), "inv.json", r#"{"V_max": -1.0}"#);
    assert_eq!(code(&run(&["simulate", "--config", s(&invalid), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["simulate"])), 2);
    assert!(!out.exists());
}

#[test]
fn io_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("p.csv");
    let o = run(&["predict", "--trajectory", s(&dir.path().join("none.csv")), "--checkpoint", s(&dir.path().join("m.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());
}

#[test]
fn diverging_training_exits_four_and_leaves_nothing() {
    let dir = TempDir::new().unwrap();
    let dataset_cfg = write(dir.path(), "dataset.json", DATASET);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["dataset", "--config", s(&dataset_cfg), "--out", s(&data)])), 0);
    let train_cfg = write(
        dir.path(),
        "train.json",
        r#"{"tau": 3, "epochs_phase1": 5, "epochs_phase2": 5, "lr": 1e300}"#,
    );
    let ckpt = dir.path().join("model.json");
    let o = run(&["train", "--config", s(&train_cfg), "--dataset", s(&data), "--out", s(&ckpt)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!ckpt.exists());
    assert!(!dir.path().join("model.loss.csv").exists());
    assert!(!dir.path().join("model.manifest.json").exists());
}

#[test]
fn resume_rejects_mismatched_dimensions() {
    let dir = TempDir::new().unwrap();
    let dataset_cfg = write(dir.path(), "dataset.json", DATASET);
    let data = dir.path().join("data");
    assert_eq!(code(&run(&["dataset", "--config", s(&dataset_cfg), "--out", s(&data)])), 0);
    let train_cfg = write(dir.path(), "train.json", TRAIN);
    let first = dir.path().join("a.json");
    assert_eq!(code(&run(&["train", "--config", s(&train_cfg), "--dataset", s(&data), "--out", s(&first)])), 0);
    let flat = write(
        dir.path(),
        "flat.json",
        r#"{"d_out": 2, "tau": 3, "epochs_phase1": 1, "epochs_phase2": 1}"#,
    );
    let second = dir.path().join("b.json");
    let o = run(&[
        "train", "--config", s(&flat), "--dataset", s(&data), "--resume", s(&first), "--out", s(&second),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!second.exists());
    let o = run(&["train", "--config", s(&train_cfg), "--dataset", s(&data), "--resume", s(&first), "--out", s(&second)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_predictor_never_detects() {
    let dir = TempDir::new().unwrap();
    let eval_cfg = write(dir.path(), "eval.json", EVAL);
    let out = dir.path().join("eval");
    let o = run(&["eval-covert", "--config", s(&eval_cfg), "--predictor", "oracle", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    for line in agg.lines().skip(1) {
        assert_eq!(line.split(',').nth(4).unwrap().parse::<f64>().unwrap(), 0.0, "{line}");
    }
    assert!(out.join("manifest.json").exists());
    assert!(out.join("report.json").exists());
}
