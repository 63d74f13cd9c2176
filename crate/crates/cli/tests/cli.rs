use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use nae_core::checkpoint::{Checkpoint, DataSchema, FeatureSchema};
use nae_core::data::{FeatureKind, QuantileTransform, Task};
use nae_core::theory::{build_product, scalar, BuildConfig, Domain, SeparableTerm};
use nae_core::training::TrainConfig;

fn nae(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nae"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run nae")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), body).unwrap();
}

const SMALL_RUN: &str = r#"{
    "data": {"simulation": {"kind": "multimodal", "n_samples": 400}},
    "output_dir": "out",
    "seed": 2,
    "hyperparameters": {
        "layers": 2, "hidden_dimension": 8, "latent_dim": 4, "total_experts": TOTAL,
        "batch_size": 64, "max_iteration": 3, "learning_rate": 0.01, "variation_penalty": 0.1
    }
}"#;

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.csv", "b.csv"] {
        let o = nae(&["simulate", "--kind", "multimodal", "--n", "200", "--seed", "5", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 5);
    assert_eq!(sidecar["schema"]["categorical"][0], "x2");
}

#[test]
fn noiseless_simulation_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = nae(&["simulate", "--kind", "unimodal", "--n", "300", "--sigma", "0", "--out", "u.csv"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("u.csv")).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let x: f64 = rec[0].parse().unwrap();
        let y: f64 = rec[1].parse().unwrap();
        assert!((y - (x - 0.5 + (4.0 * PI * x).sin())).abs() <= 1e-12, "x={x} y={y}");
    }
}

#[test]
fn missing_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace("TOTAL", "2").replace(r#""learning_rate": 0.01, "#, "");
    write_config(dir.path(), "run.json", &body);
    let o = nae(&["train", "--config", "run.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn verify_theory_passes_and_perturbation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = nae(&["verify-theory", "--grid", "21", "--json", "report.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() > 5);
    let o = nae(&["verify-theory", "--grid", "21", "--perturb", "1e-3"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("product"), "{}", stderr(&o));
}

#[test]
fn train_then_export_single_expert_has_no_envelope() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.json", &SMALL_RUN.replace("TOTAL", "1"));
    let o = nae(&["train", "--config", "run.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["checkpoint.json", "training_log.csv", "metrics.json", "run_config.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["additivity"], 1.0);
    assert_eq!(metrics["metric"], "rmse");

    let o = nae(&["simulate", "--kind", "multimodal", "--n", "100", "--seed", "9", "--out", "d.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let o = nae(
        &["export-shapes", "--checkpoint", "out/checkpoint.json", "--data", "d.csv", "--out", "shapes", "--grid", "15"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("shapes/shape_0_x1.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 15);
    for r in &rows {
        assert_eq!(&r[3], &r[4], "upper and lower differ: {r:?}");
    }
}

#[test]
fn export_rejects_mismatched_columns() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.json", &SMALL_RUN.replace("TOTAL", "2"));
    assert_eq!(code(&nae(&["train", "--config", "run.json"], dir.path())), 0);
    std::fs::write(dir.path().join("other.csv"), "a,b,y\n0.1,0.2,1\n0.3,0.4,2\n").unwrap();
    let o = nae(
        &["export-shapes", "--checkpoint", "out/checkpoint.json", "--data", "other.csv", "--out", "s"],
        dir.path(),
    );
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("expected features [x1, x2]") && err.contains("found [a, b]"), "{err}");
}

#[test]
fn exported_interaction_reproduces_product() {
    let dir = tempfile::tempdir().unwrap();
    let u = scalar(|x| x);
    let v = scalar(|z| 0.9 * (PI * z).cos());
    let term = SeparableTerm::new(0, 1, u.clone(), v.clone(), 1.0);
    let model = build_product(&term, &BuildConfig::new(vec![Domain::new(0.0, 1.0); 2], 2, 101)).unwrap();
    let schema = DataSchema {
        features: ["x1", "x2"]
            .iter()
            .map(|n| FeatureSchema {
                name: n.to_string(),
                kind: FeatureKind::Continuous,
            })
            .collect(),
        target: "y".into(),
        task: Task::Regression,
    };
    let ck = Checkpoint::new(
        model,
        TrainConfig::new(Task::Regression, 0),
        schema,
        QuantileTransform {
            columns: vec![None, None],
        },
    );
    ck.save(&dir.path().join("product.json")).unwrap();
    std::fs::write(dir.path().join("grid.csv"), "x1,x2,y\n0,0,0\n1,1,0\n0.5,0.25,0\n").unwrap();

    let o = nae(
        &[
            "export-shapes", "--checkpoint", "product.json", "--data", "grid.csv", "--out", "s", "--pairs", "0,1", "--grid", "21",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("s/interaction_0_1.csv")).unwrap();
    let rows: Vec<(f64, f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 21 * 21);
    let exact: Vec<f64> = rows.iter().map(|(a, b, _)| u(*a) * v(*b)).collect();
    let mean = exact.iter().sum::<f64>() / exact.len() as f64;
    let worst = rows
        .iter()
        .zip(&exact)
        .map(|((_, _, got), e)| (got - (e - mean)).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn single_lambda_sweep_is_vacuous() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.json", &SMALL_RUN.replace("TOTAL", "2"));
    let o = nae(&["sweep-lambda", "--config", "run.json", "--lambdas", "0.5"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/sweep.json")).unwrap()).unwrap();
    assert_eq!(report["monotone"], "vacuous");
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn unsorted_lambdas_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "run.json", &SMALL_RUN.replace("TOTAL", "2"));
    let o = nae(&["sweep-lambda", "--config", "run.json", "--lambdas", "1,0.1"], dir.path());
    assert_eq!(code(&o), 2);
}
