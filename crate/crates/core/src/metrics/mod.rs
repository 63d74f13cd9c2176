//! Task metrics, additivity, tightness and shape-function extraction.

mod additivity;
mod shapes;

pub use additivity::{
    additivity, bin_assignments, model_additivity, model_tightness, tightness, FeatureScores,
};
pub use shapes::{extract_shapes, write_interaction_csv, write_shapes, ShapeRecord};

use serde::{Deserialize, Serialize};

use crate::error::{NaeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    #[serde(default = "default_bins")]
    pub bins_for_conditional: usize,
}

fn default_delta() -> f64 {
    1e-6
}
fn default_grid() -> usize {
    101
}
fn default_bins() -> usize {
    64
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            delta: default_delta(),
            grid_points: default_grid(),
            bins_for_conditional: default_bins(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(NaeError::config("delta must be positive"));
        }
        if self.grid_points < 2 {
            return Err(NaeError::config("grid_points must be at least 2"));
        }
        if self.bins_for_conditional == 0 {
            return Err(NaeError::config("bins_for_conditional must be at least 1"));
        }
        Ok(())
    }
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn rmse(y: &[f64], pred: &[f64]) -> f64 {
    mse(y, pred).sqrt()
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auc(labels: &[f64], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(NaeError::usage("auc: labels and scores differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(NaeError::usage("auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks with tied groups sharing their mid-rank.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0 + 1.0;
        let pos = order[start..=end].iter().filter(|&&i| labels[i] == 1.0).count();
        rank_sum += mid * pos as f64;
        start = end + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}
