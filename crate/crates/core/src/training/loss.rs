use crate::data::Task;
use crate::error::{NaeError, Result};
use crate::model::BatchTrace;
use crate::numerics::{pivot_mean, Matrix};

/// Per-sample task loss: squared error, or logistic cross-entropy on a logit.
pub fn task_loss(task: Task, y_true: f64, y_pred: f64) -> Result<f64> {
    if !y_true.is_finite() || !y_pred.is_finite() {
        return Err(NaeError::numerical("task loss"));
    }
    Ok(match task {
        Task::Regression => (y_true - y_pred) * (y_true - y_pred),
        // softplus(z) − y·z = max(z, 0) − y·z + ln(1 + e^{−|z|})
        Task::BinaryClassification => y_pred.max(0.0) - y_true * y_pred + (-y_pred.abs()).exp().ln_1p(),
    })
}

/// Derivative of [`task_loss`] with respect to the prediction.
pub fn task_loss_grad(task: Task, y_true: f64, y_pred: f64) -> f64 {
    match task {
        Task::Regression => 2.0 * (y_pred - y_true),
        Task::BinaryClassification => sigmoid(y_pred) - y_true,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/(nBK)) Σ_t Σ_i Σ_k (o_ik − mean_l o_il)²` over per-feature `B × K` expert outputs.
pub fn variation_penalty(expert_outputs: &[Matrix]) -> f64 {
    let n = expert_outputs.len();
    let Some(first) = expert_outputs.first() else {
        return 0.0;
    };
    let (b, k) = (first.rows(), first.cols());
    let mut acc = 0.0;
    for o in expert_outputs {
        for t in 0..b {
            let row = o.row(t);
            let mean = pivot_mean(row.iter().copied());
            acc += row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
    }
    acc / (n * b * k) as f64
}

/// Mean of `o_i²` over all (sample, feature) slots.
pub fn output_penalty(contributions: &Matrix) -> f64 {
    if contributions.is_empty() {
        return 0.0;
    }
    contributions.data().iter().map(|v| v * v).sum::<f64>() / contributions.len() as f64
}

/// Objective weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub task: Task,
    pub lambda_var: f64,
    pub output_penalty: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub task: f64,
    /// Unweighted variation penalty (λ not applied).
    pub variation: f64,
    /// Unweighted output penalty.
    pub output: f64,
    pub total: f64,
}

/// Mean task loss plus the weighted penalties for one batch.
pub fn objective(trace: &BatchTrace, targets: &[f64], w: &LossWeights) -> Result<LossParts> {
    let b = trace.batch_size();
    let mut task = 0.0;
    for (y, p) in targets.iter().zip(&trace.predictions) {
        task += task_loss(w.task, *y, *p)?;
    }
    task /= b as f64;
    let variation = variation_penalty(&trace.expert_outputs);
    let output = output_penalty(&trace.contributions);
    let total = task + w.lambda_var * variation + w.output_penalty * output;
    if !total.is_finite() {
        return Err(NaeError::numerical("loss"));
    }
    Ok(LossParts {
        task,
        variation,
        output,
        total,
    })
}
