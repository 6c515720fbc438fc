use std::path::Path;
use std::process::{Command, Output};

use robustcoop::config::{EnvironmentConfig, RunConfig};
use robustcoop::dqn::MlpNetwork;
use robustcoop::env::{GatheringConfig, GatheringGame};
use robustcoop::io::{load_artifact, ArtifactKind, DqnArtifact, PoolArtifact};
use robustcoop::pool::epsilon_cover;
use robustcoop::{MdpFamily, ThetaVector};

fn robustcoop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustcoop"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("ROBUSTCOOP_SEED")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, config: &RunConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn worst_case_config_gives_a_two_entry_pool() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        environment: EnvironmentConfig::WorstCase { gamma: 0.99, r_max: 1.0 },
        ..RunConfig::default()
    };
    let cfg = write_config(dir.path(), &config);
    let out = robustcoop(dir.path(), &["train-pool", "--config", &cfg, "--radius", "0.5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let art = load_artifact::<PoolArtifact>(&dir.path().join("pool_0.5.json"), ArtifactKind::Pool).unwrap();
    assert_eq!(art.payload.pool.len(), 2);
}

#[test]
fn gathering_pool_size_matches_the_cover() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustcoop(dir.path(), &["train-pool", "--grid", "3", "--radius", "0.25", "--seed", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let art = load_artifact::<PoolArtifact>(&dir.path().join("pool_0.25.json"), ArtifactKind::Pool).unwrap();
    let f = GatheringGame::new(GatheringConfig::for_grid(3)).unwrap();
    let cover = epsilon_cover(f.space(), 0.25).unwrap();
    assert_eq!(art.payload.pool.len(), cover.len());
    assert_eq!(art.payload.pool.thetas(), cover);
    assert!(art.payload.pool.cover_radius <= 0.25 + 1e-12);
    assert_eq!(art.manifest.seed, 4);
    art.manifest.check_environment(&f).unwrap();
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_robustcoop"))
        .args(["train-pool", "--radius", "1", "--output-dir"])
        .arg(dir.path())
        .env("ROBUSTCOOP_SEED", "31")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let art = load_artifact::<PoolArtifact>(&dir.path().join("pool_1.json"), ArtifactKind::Pool).unwrap();
    assert_eq!(art.manifest.seed, 31);
}

#[test]
fn corrupt_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"training": {"cover_radii": [0.25, "wide"]}}"#).unwrap();
    let out = robustcoop(dir.path(), &["train-pool", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("training.cover_radii"), "{}", stderr(&out));

    std::fs::write(&cfg, r#"{"evaluation": {"runs": 0}}"#).unwrap();
    let out = robustcoop(dir.path(), &["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("evaluation.runs"), "{}", stderr(&out));
}

#[test]
fn missing_artifact_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = robustcoop(dir.path(), &["eval", "--model", missing.to_str().unwrap(), "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.json"));
}

#[test]
fn zero_iteration_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustcoop(dir.path(), &["train-dqn", "--iterations", "0", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let art = load_artifact::<DqnArtifact>(&dir.path().join("dqn.json"), ArtifactKind::Dqn).unwrap();
    assert_eq!(art.payload.log.iterations, 0);
    let sizes = art.payload.network.layer_sizes().to_vec();
    let fresh = MlpNetwork::new(&sizes, robustcoop::seed::derive(3, &[0])).unwrap();
    assert_eq!(art.payload.network.weights(), fresh.weights());

    let f = GatheringGame::new(GatheringConfig::for_grid(3)).unwrap();
    let x = f.augmented_input(17, &ThetaVector(vec![0.3, -0.6]));
    let reloaded = load_artifact::<DqnArtifact>(&dir.path().join("dqn.json"), ArtifactKind::Dqn).unwrap();
    let a = art.payload.network.forward(&x).unwrap();
    let b = reloaded.payload.network.forward(&x).unwrap();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn training_log_has_one_row_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.training.dqn.check_every = 25;
    config.training.dqn.plateau_checks = 0;
    let cfg = write_config(dir.path(), &config);
    let out = robustcoop(dir.path(), &["train-dqn", "--config", &cfg, "--iterations", "200"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let art = load_artifact::<DqnArtifact>(&dir.path().join("dqn.json"), ArtifactKind::Dqn).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("training_log.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["iteration", "validation_mse"]);
    assert_eq!(r.records().count(), art.payload.log.checkpoints.len());
    assert_eq!(art.payload.log.checkpoints.len(), 8);
}

#[test]
fn eval_refuses_artifacts_from_another_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustcoop(dir.path(), &["train-pool", "--grid", "4", "--radius", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let pool = dir.path().join("pool_1.json");
    let out = robustcoop(dir.path(), &["eval", "--grid", "3", "--pool", pool.to_str().unwrap(), "--runs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("environment"), "{}", stderr(&out));
}

#[test]
fn eval_with_artifacts_verify_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(robustcoop(d, &["train-pool", "--radius", "1"]).status.success());
    assert!(robustcoop(d, &["train-dqn", "--iterations", "50"]).status.success());
    let pool = d.join("pool_1.json");
    let model = d.join("dqn.json");
    let out = robustcoop(
        d,
        &[
            "eval",
            "--pool",
            pool.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--resolution",
            "1",
            "--runs",
            "1",
            "--episodes",
            "3",
            "--steps",
            "20",
            "--verify",
            "--trials",
            "200",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in ["AdaptPool1", "AdaptDQN", "FixedBest", "FixedMM", "Rand", "Oracle"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    let mut r = csv::Reader::from_path(d.join("bounds_report.csv")).unwrap();
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 800);
    assert!(rows.iter().all(|row| &row[6] == "true"));

    let out = robustcoop(d, &["export-report"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut r = csv::Reader::from_path(d.join("summary.csv")).unwrap();
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(&rows[0][0], "AdaptPool1");
    assert_eq!(&rows[0][1], "9");
}

#[test]
fn export_report_names_a_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("broken.csv");
    std::fs::write(&csv, "theta1,theta2,algorithm\n0,0,Oracle\n").unwrap();
    let out = robustcoop(dir.path(), &["export-report", "--input", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("regret"), "{}", stderr(&out));
}

#[test]
fn infer_demo_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = robustcoop(dir.path(), &["infer-demo", "--theta", "1,-1", "--episodes", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut r = csv::Reader::from_path(dir.path().join("inference_demo.csv")).unwrap();
    assert_eq!(r.records().count(), 5);
    let out = robustcoop(dir.path(), &["infer-demo", "--theta", "3,0"]);
    assert_eq!(out.status.code(), Some(2));
}
