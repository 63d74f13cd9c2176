//! End-to-end runs: transform, train, score, and λ sweeps over shared settings.

use serde::{Deserialize, Serialize};

use crate::data::{quantile_transform, Dataset, QuantileTransform, Split, Task};
use crate::error::{NaeError, Result};
use crate::metrics::{model_additivity, model_tightness, MetricsConfig};
use crate::model::{Dropout, Mode, ModelConfig, Nae, Noise};
use crate::training::{evaluate, train, variation_penalty, TrainConfig, TrainingLog};

/// Tolerance on the monotonicity checks of a sweep.
pub const MONOTONE_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `"rmse"` or `"auc"`.
    pub metric_name: String,
    /// Test-split task metric.
    pub metric: f64,
    pub additivity: f64,
    pub additivity_per_feature: Vec<f64>,
    pub tightness: f64,
    /// Unweighted variation penalty on the training split, evaluation mode.
    pub penalty: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub nae: Nae,
    pub log: TrainingLog,
    pub transform: QuantileTransform,
    pub metrics: RunMetrics,
}

/// `template` with its feature count and encoder inputs taken from `dataset`.
pub fn model_config_for(template: &ModelConfig, dataset: &Dataset) -> ModelConfig {
    let mut cfg = template.clone();
    cfg.n_features = dataset.n_features();
    cfg.inputs = dataset.encoder_inputs();
    cfg
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Regression => "rmse",
        Task::BinaryClassification => "auc",
    }
}

/// Quantile-transforms `dataset` (fitted on its train split), trains, and
/// scores the returned model on the test split.
pub fn run(dataset: &Dataset, model: &ModelConfig, train_cfg: &TrainConfig, metrics_cfg: &MetricsConfig) -> Result<RunOutcome> {
    metrics_cfg.validate()?;
    if train_cfg.task != dataset.task {
        return Err(NaeError::config(format!(
            "train config task {:?} does not match dataset task {:?}",
            train_cfg.task, dataset.task
        )));
    }
    let (transformed, transform) = quantile_transform(dataset)?;
    let cfg = model_config_for(model, &transformed);
    let (nae, log) = train(&transformed, &cfg, train_cfg)?;
    let metrics = score(&nae, &transformed, &log, metrics_cfg)?;
    Ok(RunOutcome {
        nae,
        log,
        transform,
        metrics,
    })
}

/// Metrics of a trained model on an already transformed dataset.
pub fn score(nae: &Nae, dataset: &Dataset, log: &TrainingLog, cfg: &MetricsConfig) -> Result<RunMetrics> {
    let (xt, yt) = dataset.subset(Split::Test);
    let (xtr, _) = dataset.subset(Split::Train);
    if xt.rows() < 2 {
        return Err(NaeError::data("test split needs at least 2 rows"));
    }
    let metric = evaluate(nae, dataset.task, &xt, &yt)?;
    let add = model_additivity(nae, &xt, cfg)?;
    let tight = model_tightness(nae, &xt, cfg)?;
    let trace = nae.forward_batch(&xtr, Mode::Eval, Dropout::default(), Noise::Off)?;
    Ok(RunMetrics {
        metric_name: metric_name(dataset.task).to_string(),
        metric,
        additivity: add.mean,
        additivity_per_feature: add.per_feature,
        tightness: tight.mean,
        penalty: variation_penalty(&trace.expert_outputs),
        best_epoch: log.best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub additivity: f64,
    pub tightness: f64,
    pub penalty: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub additivity_per_feature: Vec<f64>,
    pub best_epoch: usize,
}

impl SweepRow {
    fn from_metrics(lambda: f64, m: &RunMetrics) -> Self {
        let (rmse, auc) = if m.metric_name == "auc" { (None, Some(m.metric)) } else { (Some(m.metric), None) };
        SweepRow {
            lambda,
            additivity: m.additivity,
            tightness: m.tightness,
            penalty: m.penalty,
            rmse,
            auc,
            additivity_per_feature: m.additivity_per_feature.clone(),
            best_epoch: m.best_epoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Fewer than two λ values: nothing to compare.
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub checks: Vec<Check>,
    /// Verdict of the two monotonicity checks alone.
    pub monotone: Verdict,
    /// Set when a run failed; `rows` then holds the runs before it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.checks.iter().all(|c| c.passed)
    }
}

/// Trains one model per λ with everything else shared, in ascending λ order.
/// With `jobs > 1` runs execute on that many threads; results keep λ order.
pub fn sweep_lambda(
    dataset: &Dataset,
    lambdas: &[f64],
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    metrics_cfg: &MetricsConfig,
    jobs: usize,
) -> Result<SweepReport> {
    if lambdas.is_empty() {
        return Err(NaeError::usage("sweep needs at least one lambda"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(NaeError::usage("lambdas must be finite and >= 0"));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(NaeError::usage("lambdas must be sorted ascending"));
    }
    let one = |lambda: f64| -> Result<RunMetrics> {
        let mut cfg = train_cfg.clone();
        cfg.lambda_var = lambda;
        run(dataset, model, &cfg, metrics_cfg).map(|o| o.metrics)
    };
    let results: Vec<Result<RunMetrics>> = if jobs <= 1 {
        let mut out = Vec::new();
        for &l in lambdas {
            let r = one(l);
            let stop = r.is_err();
            out.push(r);
            if stop {
                break;
            }
        }
        out
    } else {
        let mut slots: Vec<Option<Result<RunMetrics>>> = (0..lambdas.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            for chunk in slots.chunks_mut(lambdas.len().div_ceil(jobs)).enumerate() {
                let (c, part) = chunk;
                let start = c * lambdas.len().div_ceil(jobs);
                let one = &one;
                s.spawn(move || {
                    for (o, slot) in part.iter_mut().enumerate() {
                        *slot = Some(one(lambdas[start + o]));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    };

    let mut rows = Vec::new();
    let mut failure = None;
    for (l, r) in lambdas.iter().zip(results) {
        match r {
            Ok(m) => rows.push(SweepRow::from_metrics(*l, &m)),
            Err(e) => {
                failure = Some(format!("lambda {l}: {e}"));
                break;
            }
        }
    }
    let checks = monotonicity_checks(&rows);
    let monotone = if failure.is_some() || checks.iter().any(|c| !c.passed && c.name != "additive_limit") {
        Verdict::Fail
    } else if rows.len() < 2 {
        Verdict::Vacuous
    } else {
        Verdict::Pass
    };
    Ok(SweepReport {
        rows,
        checks,
        monotone,
        failure,
    })
}

/// Penalty nonincreasing and additivity nondecreasing in λ (both within
/// [`MONOTONE_TOL`]), and additivity ≥ 0.99 at the largest λ once it reaches 10.
pub fn monotonicity_checks(rows: &[SweepRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    if rows.len() >= 2 {
        let worst_pen = rows
            .windows(2)
            .map(|w| w[1].penalty - w[0].penalty)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: "penalty_nonincreasing".into(),
            passed: worst_pen <= MONOTONE_TOL,
            detail: format!("largest increase {worst_pen:.3e}"),
        });
        let worst_add = rows
            .windows(2)
            .map(|w| w[0].additivity - w[1].additivity)
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check {
            name: "additivity_nondecreasing".into(),
            passed: worst_add <= MONOTONE_TOL,
            detail: format!("largest decrease {worst_add:.3e}"),
        });
    }
    if let Some(last) = rows.last() {
        if last.lambda >= 10.0 {
            checks.push(Check {
                name: "additive_limit".into(),
                passed: last.additivity >= 0.99,
                detail: format!("additivity {:.4} at lambda {}", last.additivity, last.lambda),
            });
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lambda: f64, additivity: f64, penalty: f64) -> SweepRow {
        SweepRow {
            lambda,
            additivity,
            tightness: 1.0,
            penalty,
            rmse: Some(0.1),
            auc: None,
            additivity_per_feature: vec![additivity],
            best_epoch: 1,
        }
    }

    #[test]
    fn single_row_is_vacuous() {
        assert!(monotonicity_checks(&[row(0.1, 0.5, 0.2)]).is_empty());
    }

    #[test]
    fn penalty_increase_within_tolerance_passes() {
        let c = monotonicity_checks(&[row(0.1, 0.5, 0.2), row(1.0, 0.6, 0.2005)]);
        assert!(c.iter().all(|c| c.passed));
        let c = monotonicity_checks(&[row(0.1, 0.5, 0.2), row(1.0, 0.6, 0.21)]);
        assert!(!c[0].passed);
    }

    #[test]
    fn additive_limit_only_from_ten() {
        let c = monotonicity_checks(&[row(0.1, 0.5, 0.2), row(1.0, 0.6, 0.1)]);
        assert!(c.iter().all(|c| c.name != "additive_limit"));
        let c = monotonicity_checks(&[row(1.0, 0.6, 0.1), row(10.0, 0.98, 0.0)]);
        assert!(!c.iter().find(|c| c.name == "additive_limit").unwrap().passed);
    }

    #[test]
    fn unsorted_lambdas_rejected() {
        let spec = crate::data::SimSpec::new(crate::data::SimKind::Unimodal, 50, 0);
        let ds = crate::data::generate(&spec).unwrap();
        let m = ModelConfig::new(1, 2, 1);
        let t = TrainConfig::new(Task::Regression, 0);
        let err = sweep_lambda(&ds, &[1.0, 0.1], &m, &t, &MetricsConfig::default(), 1);
        assert!(matches!(err, Err(NaeError::Usage(_))));
    }
}
