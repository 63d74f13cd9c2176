use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::loss::{objective, LossWeights};
use super::optim::{adamw_step, cosine_lr, AdamState};
use crate::data::{Dataset, Split, Task};
use crate::error::{NaeError, Result};
use crate::metrics::{auc, rmse};
use crate::model::{Dropout, Mode, ModelConfig, Nae, Noise};
use crate::numerics::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub lambda_var: f64,
    pub output_penalty: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    /// Epochs over the training split.
    pub max_iterations: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub dropout_expert: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        TrainConfig {
            task,
            lambda_var: 0.1,
            output_penalty: 0.0,
            weight_decay: 0.0,
            learning_rate: 1e-2,
            max_iterations: 100,
            batch_size: 256,
            dropout: 0.0,
            dropout_expert: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(NaeError::config(format!("{name} must be a finite value >= 0, got {v}")))
            }
        };
        nonneg(self.lambda_var, "lambda_var")?;
        nonneg(self.output_penalty, "output_penalty")?;
        nonneg(self.weight_decay, "weight_decay")?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NaeError::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(NaeError::config("batch_size must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(NaeError::config("max_iterations must be at least 1"));
        }
        for (v, name) in [(self.dropout, "dropout"), (self.dropout_expert, "dropout_expert")] {
            if !(0.0..1.0).contains(&v) {
                return Err(NaeError::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            task: self.task,
            lambda_var: self.lambda_var,
            output_penalty: self.output_penalty,
        }
    }
}

/// Offsets added to the run seed for each random stream.
pub mod seed_offsets {
    pub const DATA: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const NOISE: u64 = 4;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Sample-weighted mean of the full objective over the epoch's batches.
    pub train_loss: f64,
    /// Sample-weighted mean of the (unweighted) variation penalty.
    pub penalty: f64,
    /// Validation RMSE (regression) or AUC (classification).
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,penalty,val_metric\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.lr, e.train_loss, e.penalty, e.val_metric));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| NaeError::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| NaeError::io(path, e))
    }
}

/// Validation metric of `nae` on `(x, y)`: RMSE or AUC.
pub fn evaluate(nae: &Nae, task: Task, x: &crate::numerics::Matrix, y: &[f64]) -> Result<f64> {
    let pred = nae.predict(x)?;
    Ok(match task {
        Task::Regression => rmse(y, &pred),
        Task::BinaryClassification => auc(y, &pred)?,
    })
}

fn better(task: Task, candidate: f64, best: f64) -> bool {
    match task {
        Task::Regression => candidate < best,
        Task::BinaryClassification => candidate > best,
    }
}

/// Minibatch AdamW with cosine annealing; returns the best-validation epoch's model.
pub fn train(dataset: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<(Nae, TrainingLog)> {
    cfg.validate()?;
    model_config.validate()?;
    if model_config.n_features != dataset.n_features() {
        return Err(NaeError::config(format!(
            "model expects {} features, dataset has {}",
            model_config.n_features,
            dataset.n_features()
        )));
    }
    if cfg.task != dataset.task {
        return Err(NaeError::config("training task does not match the dataset task"));
    }
    let (x_tr, y_tr) = dataset.subset(Split::Train);
    if y_tr.is_empty() {
        return Err(NaeError::data("train split is empty"));
    }
    let (mut x_va, mut y_va) = dataset.subset(Split::Val);
    if y_va.is_empty() {
        log::warn!("validation split is empty; selecting the best epoch on the train split");
        x_va = x_tr.clone();
        y_va = y_tr.clone();
    }

    let mut nae = Nae::new(model_config.clone(), &mut SeededRng::derive(cfg.seed, seed_offsets::INIT))?;
    let mean_y = y_tr.iter().sum::<f64>() / y_tr.len() as f64;
    nae.params.intercept = match cfg.task {
        Task::Regression => mean_y,
        Task::BinaryClassification => {
            let p = mean_y.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };

    let mut shuffle_rng = SeededRng::derive(cfg.seed, seed_offsets::SHUFFLE);
    let mut noise_rng = SeededRng::derive(cfg.seed, seed_offsets::NOISE);
    let mut state = AdamState::new(&nae.params);
    let dropout = Dropout {
        encoder: cfg.dropout,
        expert: cfg.dropout_expert,
    };
    let weights = cfg.weights();
    let n_train = y_tr.len();
    let steps_per_epoch = n_train.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_iterations;

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Nae)> = None;
    let mut step = 0usize;
    for epoch in 0..cfg.max_iterations {
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut pen_sum) = (0.0, 0.0);
        let mut lr = cfg.learning_rate;
        for chunk in order.chunks(cfg.batch_size) {
            let diverged = |e: NaeError| NaeError::Diverged {
                epoch,
                step,
                source: Box::new(e),
            };
            let xb = x_tr.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&r| y_tr[r]).collect();
            let trace = nae
                .forward_batch(&xb, Mode::Train, dropout, Noise::Sample(&mut noise_rng))
                .map_err(diverged)?;
            let parts = objective(&trace, &yb, &weights).map_err(diverged)?;
            let grads = backward(&nae, &trace, &yb, &weights).map_err(diverged)?;
            lr = cosine_lr(step, total_steps, cfg.learning_rate);
            adamw_step(&mut nae.params, &grads.grads, &mut state, lr, cfg.weight_decay);
            nae.update_norm_stats(&trace);
            if !nae.params.is_finite() {
                return Err(diverged(NaeError::numerical("parameter update")));
            }
            loss_sum += parts.total * chunk.len() as f64;
            pen_sum += parts.variation * chunk.len() as f64;
            step += 1;
        }
        let val = evaluate(&nae, cfg.task, &x_va, &y_va).map_err(|e| NaeError::Diverged {
            epoch,
            step,
            source: Box::new(e),
        })?;
        log::debug!("epoch {epoch}: loss {:.6} val {val:.6}", loss_sum / n_train as f64);
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / n_train as f64,
            penalty: pen_sum / n_train as f64,
            val_metric: val,
        });
        let improved = match &best {
            None => true,
            Some((b, _)) => better(cfg.task, val, *b),
        };
        if improved {
            best = Some((val, nae.clone()));
            log.best_epoch = epoch;
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, log))
}
