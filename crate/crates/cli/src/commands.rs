use std::path::{Path, PathBuf};

use log::info;
use nae_core::checkpoint::{Checkpoint, DataSchema, SeedRecord};
use nae_core::data::{generate, load_csv, CsvSchema, Dataset, FeatureKind, SimKind, SimSpec};
use nae_core::experiment::{self, RunMetrics, SweepReport};
use nae_core::metrics::{extract_shapes, write_interaction_csv, write_shapes, MetricsConfig};
use nae_core::theory::{verify_theory, TheoryReport, VerifyOptions};
use nae_core::training::seed_offsets;
use nae_core::{NaeError, Result};
use serde::Serialize;

use crate::config::{DataSource, RunConfig};

/// Outcome of a command that ran to completion: whether its checks passed.
pub type Passed = bool;

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| NaeError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| NaeError::io(dir, e))
}

pub struct SimulateArgs {
    pub kind: SimKind,
    pub n: usize,
    pub sigma: Option<f64>,
    pub minority_fraction: Option<f64>,
    pub cf: Option<usize>,
    pub rho: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SimSidecar<'a> {
    spec: &'a SimSpec,
    seed: u64,
    schema: CsvSchema,
}

/// Path of the JSON written next to a simulated CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn simulate(args: &SimulateArgs) -> Result<Passed> {
    let mut spec = SimSpec::new(args.kind, args.n, args.seed);
    if let Some(s) = args.sigma {
        spec.sigma = s;
    }
    spec.minority_fraction = args.minority_fraction;
    spec.cf = args.cf;
    spec.rho = args.rho;
    let ds = generate(&spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    ds.write_csv(&args.out)?;
    let schema = CsvSchema {
        target: ds.target_name.clone(),
        task: ds.task,
        categorical: ds
            .names
            .iter()
            .zip(&ds.kinds)
            .filter(|(_, k)| k.is_categorical())
            .map(|(n, _)| n.clone())
            .collect(),
        split: Some("split".into()),
    };
    let sidecar = sidecar_path(&args.out);
    write_json(
        &sidecar,
        &SimSidecar {
            spec: &spec,
            seed: args.seed,
            schema,
        },
    )?;
    println!("wrote {} rows to {} ({})", ds.n_rows(), args.out.display(), sidecar.display());
    Ok(true)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Simulation(s) => generate(&s.spec(cfg.seed)),
        DataSource::Csv { path, schema } => load_csv(path, schema, cfg.seed.wrapping_add(seed_offsets::SPLIT)),
    }
}

/// `metrics.json`: the task metric under its own name (`rmse` or `auc`).
#[derive(Serialize)]
struct MetricsFile<'a> {
    metric: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
    additivity: f64,
    tightness: f64,
    additivity_per_feature: &'a [f64],
    penalty: f64,
    best_epoch: usize,
    seeds: SeedRecord,
}

impl<'a> MetricsFile<'a> {
    fn new(m: &'a RunMetrics, seed: u64) -> Self {
        let is_auc = m.metric_name == "auc";
        MetricsFile {
            metric: &m.metric_name,
            rmse: (!is_auc).then_some(m.metric),
            auc: is_auc.then_some(m.metric),
            additivity: m.additivity,
            tightness: m.tightness,
            additivity_per_feature: &m.additivity_per_feature,
            penalty: m.penalty,
            best_epoch: m.best_epoch,
            seeds: SeedRecord::from_seed(seed),
        }
    }
}

pub fn train(config_path: &Path) -> Result<Passed> {
    let cfg = RunConfig::load(config_path)?;
    let ds = load_dataset(&cfg)?;
    let h = &cfg.hyperparameters;
    let train_cfg = h.train_config(ds.task, cfg.seed);
    info!("training on {} rows, {} features", ds.n_rows(), ds.n_features());
    let outcome = experiment::run(&ds, &h.model_config(), &train_cfg, &cfg.metrics)?;

    create_dir(&cfg.output_dir)?;
    let ck = Checkpoint::new(outcome.nae, train_cfg.clone(), DataSchema::of(&ds), outcome.transform);
    ck.save(&cfg.output_dir.join("checkpoint.json"))?;
    outcome.log.write_csv(&cfg.output_dir.join("training_log.csv"))?;
    let m = &outcome.metrics;
    write_json(
        &cfg.output_dir.join("metrics.json"),
        &MetricsFile::new(m, cfg.seed),
    )?;
    write_json(&cfg.output_dir.join("run_config.json"), &cfg)?;
    println!(
        "{} {:.4}  additivity {:.4}  tightness {:.4}  best epoch {}",
        m.metric_name, m.metric, m.additivity, m.tightness, m.best_epoch
    );
    println!("outputs in {}", cfg.output_dir.display());
    Ok(true)
}

pub struct ExportArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub pairs: Vec<(usize, usize)>,
    pub grid: Option<usize>,
}

/// Loads `path` with the checkpoint's schema and reorders categorical codes to
/// the checkpoint's level order.
fn load_for_checkpoint(path: &Path, ck: &Checkpoint) -> Result<Dataset> {
    let header = {
        let mut r = csv::Reader::from_path(path).map_err(|e| NaeError::data(format!("{}: {e}", path.display())))?;
        r.headers()?.iter().map(|h| h.trim().to_string()).collect::<Vec<_>>()
    };
    let expected: Vec<&str> = ck.schema.features.iter().map(|f| f.name.as_str()).collect();
    let found: Vec<&str> = header
        .iter()
        .map(String::as_str)
        .filter(|h| *h != ck.schema.target && *h != "split")
        .collect();
    if expected != found {
        return Err(NaeError::data(format!(
            "{}: columns do not match the checkpoint schema; expected features [{}], found [{}]",
            path.display(),
            expected.join(", "),
            found.join(", ")
        )));
    }
    let schema = CsvSchema {
        target: ck.schema.target.clone(),
        task: ck.schema.task,
        categorical: ck
            .schema
            .features
            .iter()
            .filter(|f| f.kind.is_categorical())
            .map(|f| f.name.clone())
            .collect(),
        split: header.iter().any(|h| h == "split").then(|| "split".to_string()),
    };
    let mut ds = load_csv(path, &schema, ck.seeds.split)?;
    if ds.names.len() == ck.schema.features.len() {
        for (c, f) in ck.schema.features.iter().enumerate() {
            let (FeatureKind::Categorical { levels: want }, FeatureKind::Categorical { levels: have }) =
                (&f.kind, &ds.kinds[c])
            else {
                continue;
            };
            let mut sorted_want = want.clone();
            let mut sorted_have = have.clone();
            sorted_want.sort();
            sorted_have.sort();
            if sorted_want != sorted_have || want == have {
                continue;
            }
            let map: Vec<f64> = have
                .iter()
                .map(|l| want.iter().position(|w| w == l).expect("same level set") as f64)
                .collect();
            for r in 0..ds.n_rows() {
                let v = ds.features.get(r, c) as usize;
                ds.features.set(r, c, map[v]);
            }
            ds.kinds[c] = f.kind.clone();
        }
    }
    ck.schema.check(&ds)?;
    Ok(ds)
}

pub fn export_shapes(args: &ExportArgs) -> Result<Passed> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let raw = load_for_checkpoint(&args.data, &ck)?;
    let mut mcfg = MetricsConfig::default();
    if let Some(g) = args.grid {
        mcfg.grid_points = g;
    }
    let records = extract_shapes(&ck.model, &raw, Some(&ck.transform), &mcfg)?;
    let ds = &raw;
    let written = write_shapes(&records, &args.out)?;
    for (i, j) in &args.pairs {
        let n = ds.n_features();
        if *i >= n || *j >= n || i == j {
            return Err(NaeError::usage(format!("pair {i},{j} is not two distinct features below {n}")));
        }
        let grid = |f: usize| -> Vec<f64> {
            match &ds.kinds[f] {
                FeatureKind::Categorical { levels } => (0..levels.len()).map(|c| c as f64).collect(),
                FeatureKind::Continuous => {
                    let col = ds.features.column(f);
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let g = mcfg.grid_points;
                    (0..g)
                        .map(|p| if p + 1 == g { hi } else { lo + (hi - lo) * p as f64 / (g - 1) as f64 })
                        .collect()
                }
            }
        };
        let (gi, gj) = (grid(*i), grid(*j));
        let model_i: Vec<f64> = gi.iter().map(|&v| ck.transform.transform_value(*i, v)).collect();
        let model_j: Vec<f64> = gj.iter().map(|&v| ck.transform.transform_value(*j, v)).collect();
        let surface = ck.model.pairwise_interaction(*i, *j, &model_i, &model_j)?;
        let path = args.out.join(format!("interaction_{i}_{j}.csv"));
        write_interaction_csv(&path, &gi, &gj, &surface)?;
        println!("wrote {}", path.display());
    }
    println!("wrote {} shape files to {}", written.len() - 1, args.out.display());
    Ok(true)
}

pub fn verify(opts: &VerifyOptions, json: Option<&Path>) -> Result<Passed> {
    let report: TheoryReport = verify_theory(opts)?;
    for c in &report.checks {
        println!(
            "{:<4} {:<26} error {:.3e}  tolerance {:.1e}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.error,
            c.tolerance
        );
    }
    if let Some(path) = json {
        write_json(path, &report)?;
    }
    for c in report.failures() {
        eprintln!("check failed: {} (error {:e} > {:e})", c.name, c.error, c.tolerance);
    }
    Ok(report.passed())
}

pub fn sweep(config_path: &Path, lambdas: &[f64], jobs: usize) -> Result<Passed> {
    let cfg = RunConfig::load(config_path)?;
    let ds = load_dataset(&cfg)?;
    let h = &cfg.hyperparameters;
    let train_cfg = h.train_config(ds.task, cfg.seed);
    let report: SweepReport =
        experiment::sweep_lambda(&ds, lambdas, &h.model_config(), &train_cfg, &cfg.metrics, jobs)?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("sweep.json");
    write_json(&path, &report)?;
    let metric = experiment::metric_name(ds.task);
    println!("{:>10} {:>11} {:>10} {:>10} {:>10}", "lambda", "additivity", "tightness", metric, "penalty");
    for r in &report.rows {
        println!(
            "{:>10} {:>11.4} {:>10.4} {:>10.4} {:>10.3e}",
            r.lambda,
            r.additivity,
            r.tightness,
            r.rmse.or(r.auc).unwrap_or(f64::NAN),
            r.penalty
        );
    }
    for c in &report.checks {
        println!("{:<4} {} ({})", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    println!("monotone: {:?}", report.monotone);
    if let Some(f) = &report.failure {
        eprintln!("run failed: {f}");
    }
    println!("report in {}", path.display());
    Ok(report.passed())
}
