use serde::{Deserialize, Serialize};

use super::MetricsConfig;
use crate::error::{NaeError, Result};
use crate::model::{aggregate, BatchTrace, Dropout, EncoderInput, Mode, Nae, Noise};
use crate::numerics::{pivot_mean, population_variance, Matrix};

/// A score per feature and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub per_feature: Vec<f64>,
    pub mean: f64,
}

impl FeatureScores {
    fn from_vec(per_feature: Vec<f64>) -> Self {
        let mean = per_feature.iter().sum::<f64>() / per_feature.len() as f64;
        FeatureScores { per_feature, mean }
    }
}

/// Groups samples by their value for conditioning; returns a contiguous bin id per sample.
///
/// Categorical columns, and continuous columns with at most `bins` distinct values,
/// are grouped exactly. Otherwise the sorted samples are cut into `bins`
/// equal-count bins, never separating equal values.
pub fn bin_assignments(values: &[f64], categorical: bool, bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end + 1;
    }
    let exact = categorical || groups.len() <= bins;
    let mut out = vec![0; n];
    let mut bin = 0;
    let mut last_raw = None;
    for (g, &(s, e)) in groups.iter().enumerate() {
        let raw = if exact { g } else { s * bins / n };
        if let Some(prev) = last_raw {
            if raw != prev {
                bin += 1;
            }
        }
        last_raw = Some(raw);
        for &idx in &order[s..=e] {
            out[idx] = bin;
        }
    }
    out
}

fn members(bins: &[usize]) -> Vec<Vec<usize>> {
    let n_bins = bins.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); n_bins];
    for (t, &b) in bins.iter().enumerate() {
        out[b].push(t);
    }
    out
}

fn ratio(num: f64, den: f64, delta: f64) -> f64 {
    (num + delta) / (den + delta)
}

/// Additivity from observed contributions: mean over features of
/// `(Var(E[o_i | x_i]) + δ) / (Var(o_i) + δ)`, the conditional mean taken within bins.
pub fn additivity(x: &Matrix, contributions: &Matrix, categorical: &[bool], cfg: &MetricsConfig) -> Result<FeatureScores> {
    cfg.validate()?;
    if x.rows() < 2 {
        return Err(NaeError::usage("additivity needs at least 2 samples"));
    }
    if contributions.rows() != x.rows() || contributions.cols() != x.cols() || categorical.len() != x.cols() {
        return Err(NaeError::usage("additivity: inputs and contributions disagree in shape"));
    }
    let scores = (0..x.cols())
        .map(|i| {
            let o = contributions.column(i);
            let bins = bin_assignments(&x.column(i), categorical[i], cfg.bins_for_conditional);
            let groups = members(&bins);
            let means: Vec<f64> = groups.iter().map(|g| pivot_mean(g.iter().map(|&t| o[t]))).collect();
            let cond: Vec<f64> = bins.iter().map(|&b| means[b]).collect();
            ratio(population_variance(&cond), population_variance(&o), cfg.delta)
        })
        .collect();
    Ok(FeatureScores::from_vec(scores))
}

/// Tightness from per-sample contributions and bounds: per bin,
/// `(max o − min o + δ) / (max upper − min lower + δ)`, averaged over samples.
pub fn tightness(
    x: &Matrix,
    contributions: &Matrix,
    upper: &Matrix,
    lower: &Matrix,
    categorical: &[bool],
    cfg: &MetricsConfig,
) -> Result<FeatureScores> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(NaeError::usage("tightness needs at least 1 sample"));
    }
    let scores = (0..x.cols())
        .map(|i| {
            let bins = bin_assignments(&x.column(i), categorical[i], cfg.bins_for_conditional);
            let mut total = 0.0;
            for g in members(&bins) {
                let fold = |m: &Matrix, init: f64, f: fn(f64, f64) -> f64| {
                    g.iter().map(|&t| m.get(t, i)).fold(init, f)
                };
                let obs = fold(contributions, f64::NEG_INFINITY, f64::max) - fold(contributions, f64::INFINITY, f64::min);
                let span = fold(upper, f64::NEG_INFINITY, f64::max) - fold(lower, f64::INFINITY, f64::min);
                total += g.len() as f64 * ratio(obs, span, cfg.delta);
            }
            total / x.rows() as f64
        })
        .collect();
    Ok(FeatureScores::from_vec(scores))
}

/// Evaluates `o_i` at each sample's own `x_i` under the gating contexts of the
/// samples sharing its bin. Calls `visit(t, values)` for every sample `t`.
///
/// The context of sample `s` is its gate logits with feature i's own term
/// `E_i(x_i^s)·A_ii` swapped for `E_i(x_i^t)·A_ii`.
fn substituted_contributions(
    nae: &Nae,
    trace: &BatchTrace,
    i: usize,
    bins: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let k = nae.config.n_experts;
    let x = &trace.inputs;
    let enc = &trace.encodings[i];
    let own = nae.gate_term(i, i, enc);
    let outputs = &trace.expert_outputs[i];
    let categorical = matches!(nae.config.inputs[i], EncoderInput::Categorical(_));
    let bin_of = bin_assignments(&x.column(i), categorical, bins);
    let groups = members(&bin_of);
    let mut logits = vec![0.0; k];
    let mut values = Vec::new();
    for t in 0..x.rows() {
        values.clear();
        for &s in &groups[bin_of[t]] {
            let phi = &trace.gate_logits.row(s)[i * k..(i + 1) * k];
            for kk in 0..k {
                logits[kk] = phi[kk] - own.get(s, kk) + own.get(t, kk);
            }
            let r = nae.relevance_eval(&logits);
            values.push(aggregate(outputs.row(t), &r));
        }
        visit(t, &values);
    }
    Ok(())
}

/// Additivity of a model on `x`, with `E[o_i | x_i]` estimated by averaging over
/// the gating contexts observed in the same bin of `x_i`. Exactly 1 for K = 1.
pub fn model_additivity(nae: &Nae, x: &Matrix, cfg: &MetricsConfig) -> Result<FeatureScores> {
    cfg.validate()?;
    if x.rows() < 2 {
        return Err(NaeError::usage("additivity needs at least 2 samples"));
    }
    let trace = nae.forward_batch(x, Mode::Eval, Dropout::default(), Noise::Off)?;
    let mut scores = Vec::with_capacity(x.cols());
    for i in 0..x.cols() {
        let mut cond = vec![0.0; x.rows()];
        substituted_contributions(nae, &trace, i, cfg.bins_for_conditional, |t, v| {
            cond[t] = pivot_mean(v.iter().copied());
        })?;
        let o = trace.contributions.column(i);
        scores.push(ratio(population_variance(&cond), population_variance(&o), cfg.delta));
    }
    Ok(FeatureScores::from_vec(scores))
}

/// Tightness of a model on `x`: for each sample, the spread of `o_i` at its `x_i`
/// across the contexts of its bin, relative to the expert bounds at that `x_i`.
/// Exactly 1 for K = 1.
pub fn model_tightness(nae: &Nae, x: &Matrix, cfg: &MetricsConfig) -> Result<FeatureScores> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(NaeError::usage("tightness needs at least 1 sample"));
    }
    let trace = nae.forward_batch(x, Mode::Eval, Dropout::default(), Noise::Off)?;
    let mut scores = Vec::with_capacity(x.cols());
    for i in 0..x.cols() {
        let (_, bounds) = nae.feature_bounds(i, &x.column(i))?;
        let mut total = 0.0;
        substituted_contributions(nae, &trace, i, cfg.bins_for_conditional, |t, v| {
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let (upper, lower) = bounds[t];
            total += ratio(hi - lo, upper - lower, cfg.delta);
        })?;
        scores.push(total / x.rows() as f64);
    }
    Ok(FeatureScores::from_vec(scores))
}
