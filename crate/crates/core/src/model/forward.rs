//! Batched forward pass: encoders, expert heads, cross-feature gating, masked
//! relevances, per-feature contributions and the additive prediction.

use super::config::{EncoderInput, Normalization, Variant};
use super::params::{Encoder, Gating, LookupTable, MlpLayer, RunningStats, NORM_EPS};
use super::Nae;
use crate::error::{NaeError, Result};
use crate::numerics::{gemm, matmul_nn, softmax_masked_into, top_c_into, MaskVector, Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout rates; only read in [`Mode::Train`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dropout {
    /// Probability of zeroing a hidden encoder activation.
    pub encoder: f64,
    /// Probability of zeroing an expert output before aggregation.
    pub expert: f64,
}

/// Source of the stochastic elements of a training-mode pass.
pub enum Noise<'a> {
    /// No dropout and zero Gumbel noise.
    Off,
    Sample(&'a mut SeededRng),
    /// Reuse the draws recorded by an earlier pass on the same batch.
    Replay(&'a Draws),
}

/// Random draws consumed by one training-mode pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Draws {
    /// `[feature][layer]`: inverted-dropout multipliers (`0` or `1/(1−p)`), `B × width`.
    pub encoder_dropout: Vec<Vec<Option<Matrix>>>,
    /// `[feature]`: multipliers on the expert outputs, `B × K`.
    pub expert_dropout: Vec<Option<Matrix>>,
    /// `B × nK` Gumbel(0, 1) noise on the gate logits (diagonal variant only).
    pub gumbel: Option<Matrix>,
}

/// Intermediates of one MLP encoder, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct MlpCache {
    /// Inputs of layers `1..L` (layer 0 reads the raw column).
    pub inputs: Vec<Matrix>,
    pub xhat: Vec<Matrix>,
    /// Per-row (layer norm) or per-column (batch norm) `1/√(var + ε)`.
    pub inv_std: Vec<Vec<f64>>,
    /// Post-ReLU activations.
    pub activations: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub(crate) enum EncoderCache {
    Mlp(MlpCache),
    Lookup,
}

/// Everything computed for a batch of `B` samples.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    pub mode: Mode,
    /// Raw inputs, `B × n`.
    pub inputs: Matrix,
    /// `[feature]`: latent encodings `E_i(x_i)`, `B × d`.
    pub encodings: Vec<Matrix>,
    /// `[feature]`: expert outputs `o_ik` before dropout, `B × K`.
    pub expert_outputs: Vec<Matrix>,
    /// `[feature]`: expert outputs after expert dropout (equal to `expert_outputs` in eval).
    pub dropped_outputs: Vec<Matrix>,
    /// Gate logits `φ_j`, `B × nK`.
    pub gate_logits: Matrix,
    /// Active experts (top-C), `B × nK` row-major.
    pub active: Vec<bool>,
    /// Relevances `r_jk`, `B × nK`.
    pub relevances: Matrix,
    /// Softmax temperature applied to the relevance logits (τ for diagonal training, else 1).
    pub temperature: f64,
    /// Feature contributions `o_i`, `B × n`.
    pub contributions: Matrix,
    pub predictions: Vec<f64>,
    pub draws: Draws,
    pub(crate) caches: Vec<EncoderCache>,
    /// Batch statistics `(mean, unbiased var)` per feature and layer, batch norm training only.
    pub(crate) batch_stats: Vec<Vec<RunningStats>>,
}

/// One sample's slice of a [`BatchTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub encodings: Vec<Vec<f64>>,
    pub expert_outputs: Vec<Vec<f64>>,
    pub gate_logits: Vec<Vec<f64>>,
    pub masks: Vec<MaskVector>,
    pub relevances: Vec<Vec<f64>>,
    pub contributions: Vec<f64>,
    pub prediction: f64,
}

impl BatchTrace {
    pub fn batch_size(&self) -> usize {
        self.predictions.len()
    }

    pub fn sample(&self, t: usize) -> ForwardTrace {
        let n = self.encodings.len();
        let k = self.expert_outputs.first().map_or(0, Matrix::cols);
        let block = |m: &Matrix, j: usize| m.row(t)[j * k..(j + 1) * k].to_vec();
        ForwardTrace {
            encodings: self.encodings.iter().map(|e| e.row(t).to_vec()).collect(),
            expert_outputs: self.expert_outputs.iter().map(|o| o.row(t).to_vec()).collect(),
            gate_logits: (0..n).map(|j| block(&self.gate_logits, j)).collect(),
            masks: (0..n)
                .map(|j| {
                    let start = t * n * k + j * k;
                    MaskVector::from_active(self.active[start..start + k].to_vec())
                })
                .collect(),
            relevances: (0..n).map(|j| block(&self.relevances, j)).collect(),
            contributions: self.contributions.row(t).to_vec(),
            prediction: self.predictions[t],
        }
    }
}

/// `o = o₀ + Σ_k r_k (o_k − o₀)`: equal to `Σ_k r_k o_k` when `Σ r = 1`, and
/// exactly `o₀` when all expert outputs coincide.
#[inline]
pub(crate) fn aggregate(outputs: &[f64], relevances: &[f64]) -> f64 {
    let pivot = outputs[0];
    let mut acc = 0.0;
    for (o, r) in outputs.iter().zip(relevances) {
        acc += r * (o - pivot);
    }
    pivot + acc
}

fn check(m: &Matrix, stage: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(NaeError::numerical(stage))
    }
}

fn dropout_mask(rng: &mut SeededRng, rows: usize, cols: usize, p: f64) -> Matrix {
    let scale = 1.0 / (1.0 - p);
    Matrix::from_fn(rows, cols, |_, _| if rng.bernoulli(p) { 0.0 } else { scale })
}

struct FeatureNoise<'a, 'b> {
    noise: &'a mut Noise<'b>,
    feature: usize,
}

impl FeatureNoise<'_, '_> {
    fn encoder_mask(&mut self, layer: usize, rows: usize, cols: usize, p: f64) -> Option<Matrix> {
        match self.noise {
            Noise::Off => None,
            Noise::Sample(rng) => (p > 0.0).then(|| dropout_mask(rng, rows, cols, p)),
            Noise::Replay(d) => d
                .encoder_dropout
                .get(self.feature)
                .and_then(|f| f.get(layer))
                .cloned()
                .flatten(),
        }
    }

    fn expert_mask(&mut self, rows: usize, cols: usize, p: f64) -> Option<Matrix> {
        match self.noise {
            Noise::Off => None,
            Noise::Sample(rng) => (p > 0.0).then(|| dropout_mask(rng, rows, cols, p)),
            Noise::Replay(d) => d.expert_dropout.get(self.feature).cloned().flatten(),
        }
    }
}

/// Normalizes `z` in place into `N = γ·x̂ + β`; returns `(x̂, inv_std, batch stats)`.
fn normalize(
    z: &mut Matrix,
    layer: &MlpLayer,
    norm: Normalization,
    mode: Mode,
    running: Option<&RunningStats>,
) -> (Matrix, Vec<f64>, Option<RunningStats>) {
    let (b, w) = (z.rows(), z.cols());
    let mut xhat = Matrix::zeros(b, w);
    let gain = layer.norm.gain.data();
    let shift = layer.norm.shift.data();
    match norm {
        Normalization::LayerNorm => {
            let mut inv_std = Vec::with_capacity(b);
            for t in 0..b {
                let row = z.row(t);
                let mean = row.iter().sum::<f64>() / w as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
                let inv = 1.0 / (var + NORM_EPS).sqrt();
                inv_std.push(inv);
                let xr = xhat.row_mut(t);
                for (x, v) in xr.iter_mut().zip(row) {
                    *x = (v - mean) * inv;
                }
            }
            apply_affine(z, &xhat, gain, shift);
            (xhat, inv_std, None)
        }
        Normalization::BatchNorm => {
            let (mean, var, stats) = if mode == Mode::Train {
                let mean: Vec<f64> = z.column_sums().iter().map(|s| s / b as f64).collect();
                let mut var = vec![0.0; w];
                for t in 0..b {
                    for ((v, x), m) in var.iter_mut().zip(z.row(t)).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                let unbiased: Vec<f64> = if b > 1 {
                    var.iter().map(|v| v / (b - 1) as f64).collect()
                } else {
                    var.clone()
                };
                let var: Vec<f64> = var.iter().map(|v| v / b as f64).collect();
                let stats = RunningStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            } else {
                let r = running.expect("batch norm running statistics");
                (r.mean.clone(), r.var.clone(), None)
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            for t in 0..b {
                let zr = z.row(t);
                let xr = xhat.row_mut(t);
                for c in 0..w {
                    xr[c] = (zr[c] - mean[c]) * inv_std[c];
                }
            }
            apply_affine(z, &xhat, gain, shift);
            (xhat, inv_std, stats)
        }
    }
}

fn apply_affine(z: &mut Matrix, xhat: &Matrix, gain: &[f64], shift: &[f64]) {
    for t in 0..z.rows() {
        let xr = xhat.row(t);
        for (c, v) in z.row_mut(t).iter_mut().enumerate() {
            *v = gain[c] * xr[c] + shift[c];
        }
    }
}

/// First-layer pre-activation for a raw column.
fn first_layer(input: EncoderInput, layer: &MlpLayer, x: &[f64]) -> Result<Matrix> {
    let w = layer.linear.weight.cols();
    let bias = layer.linear.bias.data();
    let mut z = Matrix::zeros(x.len(), w);
    match input {
        EncoderInput::Continuous => {
            let weight = layer.linear.weight.row(0);
            for (t, &xv) in x.iter().enumerate() {
                for ((o, wv), bv) in z.row_mut(t).iter_mut().zip(weight).zip(bias) {
                    *o = xv * wv + bv;
                }
            }
        }
        EncoderInput::Categorical(card) => {
            for (t, &xv) in x.iter().enumerate() {
                let code = category_code(xv, card)?;
                let emb = layer.linear.weight.row(code);
                for ((o, e), bv) in z.row_mut(t).iter_mut().zip(emb).zip(bias) {
                    *o = e + bv;
                }
            }
        }
    }
    Ok(z)
}

pub(crate) fn category_code(x: f64, card: usize) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && (x as usize) < card {
        Ok(x as usize)
    } else {
        Err(NaeError::data(format!("category code {x} outside 0..{card}")))
    }
}

struct Encoded {
    latent: Matrix,
    cache: EncoderCache,
    stats: Vec<RunningStats>,
}

#[allow(clippy::too_many_arguments)]
fn encode_mlp(
    input: EncoderInput,
    layers: &[MlpLayer],
    x: &[f64],
    norm: Normalization,
    mode: Mode,
    running: Option<&[RunningStats]>,
    dropout: f64,
    noise: &mut FeatureNoise<'_, '_>,
    draws: &mut Vec<Option<Matrix>>,
) -> Result<Encoded> {
    let n_layers = layers.len();
    let mut cache = MlpCache {
        inputs: Vec::with_capacity(n_layers.saturating_sub(1)),
        xhat: Vec::with_capacity(n_layers),
        inv_std: Vec::with_capacity(n_layers),
        activations: Vec::with_capacity(n_layers),
    };
    let mut stats = Vec::new();
    let mut z = first_layer(input, &layers[0], x)?;
    for (l, layer) in layers.iter().enumerate() {
        if l > 0 {
            let prev = cache.inputs.last().expect("layer input");
            z = matmul_nn(prev, &layer.linear.weight);
            z.add_row_broadcast(layer.linear.bias.data());
        }
        let (xhat, inv_std, batch) = normalize(&mut z, layer, norm, mode, running.map(|r| &r[l]));
        if let Some(s) = batch {
            stats.push(s);
        }
        z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let act = z.clone();
        cache.xhat.push(xhat);
        cache.inv_std.push(inv_std);
        if l + 1 < n_layers {
            let mut next = z;
            let mask = if mode == Mode::Train {
                noise.encoder_mask(l, next.rows(), next.cols(), dropout)
            } else {
                None
            };
            if let Some(m) = &mask {
                for (v, s) in next.data_mut().iter_mut().zip(m.data()) {
                    *v *= s;
                }
            }
            draws.push(mask);
            cache.inputs.push(next);
        }
        cache.activations.push(act);
        z = Matrix::zeros(0, 0);
    }
    let latent = cache.activations.last().expect("encoder output").clone();
    Ok(Encoded {
        latent,
        cache: EncoderCache::Mlp(cache),
        stats,
    })
}

fn encode_lookup(table: &LookupTable, x: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(x.len(), table.table.cols());
    for (t, &xv) in x.iter().enumerate() {
        table.eval_into(xv, out.row_mut(t));
    }
    out
}

impl Nae {
    /// Latent encodings of feature `i` for the given raw values (eval mode).
    pub fn encode_feature(&self, i: usize, values: &[f64]) -> Result<Matrix> {
        let mut noise = Noise::Off;
        let mut fnoise = FeatureNoise {
            noise: &mut noise,
            feature: i,
        };
        let mut sink = Vec::new();
        match &self.params.encoders[i] {
            Encoder::Mlp { input, layers } => {
                let running = self.norm_stats.layers.get(i).map(Vec::as_slice);
                let enc = encode_mlp(
                    *input,
                    layers,
                    values,
                    self.config.normalization,
                    Mode::Eval,
                    running,
                    0.0,
                    &mut fnoise,
                    &mut sink,
                )?;
                Ok(enc.latent)
            }
            Encoder::Lookup(t) => Ok(encode_lookup(t, values)),
        }
    }

    /// Expert outputs `g_ik(E_i)` for a block of encodings of feature `i`.
    ///
    /// Every head accumulates in the same order, so identical heads give
    /// bit-identical outputs.
    pub fn expert_outputs(&self, i: usize, encodings: &Matrix) -> Matrix {
        let heads = &self.params.experts[i];
        let (d, k) = (heads.weight.rows(), heads.weight.cols());
        let mut o = Matrix::zeros(encodings.rows(), k);
        for b in 0..encodings.rows() {
            let e = encodings.row(b);
            let out = o.row_mut(b);
            for r in 0..d {
                let w = heads.weight.row(r);
                for c in 0..k {
                    out[c] += e[r] * w[c];
                }
            }
        }
        o.add_row_broadcast(heads.bias.data());
        o
    }

    /// Gate-logit term `E · A_ij` contributed by source feature `i` to feature `j`.
    pub fn gate_term(&self, i: usize, j: usize, encodings: &Matrix) -> Matrix {
        let block = self.params.gate_block(&self.config, i, j);
        matmul_nn(encodings, &block)
    }

    /// Eval-mode relevances of one feature's experts from its gate logits.
    pub fn relevance_eval(&self, logits: &[f64]) -> Vec<f64> {
        let k = logits.len();
        let mut active = vec![false; k];
        top_c_into(logits, self.config.n_active, &mut active);
        let mut r = vec![0.0; k];
        match self.config.variant {
            Variant::Even => softmax_masked_into(&vec![0.0; k], &active, 1.0, &mut r),
            Variant::Standard | Variant::Diagonal => softmax_masked_into(logits, &active, 1.0, &mut r),
        }
        r
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64], mode: Mode, dropout: Dropout, noise: Noise<'_>) -> Result<ForwardTrace> {
        if x.len() != self.config.n_features {
            return Err(NaeError::usage(format!(
                "input has {} values for {} features",
                x.len(),
                self.config.n_features
            )));
        }
        let trace = self.forward_batch(&Matrix::row_vector(x), mode, dropout, noise)?;
        Ok(trace.sample(0))
    }

    pub fn forward_batch(&self, x: &Matrix, mode: Mode, dropout: Dropout, noise: Noise<'_>) -> Result<BatchTrace> {
        self.forward_batch_detached(x, mode, dropout, noise, None)
    }

    /// Forward pass with the even variant's detached logits `φ*` supplied explicitly
    /// (`B × nK`); `None` detaches the current logits, giving uniform relevances.
    pub fn forward_batch_detached(
        &self,
        x: &Matrix,
        mode: Mode,
        dropout: Dropout,
        mut noise: Noise<'_>,
        detached: Option<&Matrix>,
    ) -> Result<BatchTrace> {
        let cfg = &self.config;
        let n = cfg.n_features;
        let k = cfg.n_experts;
        let d = cfg.latent_dim;
        let b = x.rows();
        if x.cols() != n {
            return Err(NaeError::usage(format!("input has {} columns for {n} features", x.cols())));
        }
        if !x.is_finite() {
            return Err(NaeError::numerical("input"));
        }
        let train = mode == Mode::Train;

        let mut draws = Draws::default();
        let mut encodings = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut batch_stats = Vec::new();
        let mut expert_outputs = Vec::with_capacity(n);
        let mut dropped_outputs = Vec::with_capacity(n);

        for i in 0..n {
            let column = x.column(i);
            let mut layer_draws = Vec::new();
            let mut fnoise = FeatureNoise {
                noise: &mut noise,
                feature: i,
            };
            let (latent, cache) = match &self.params.encoders[i] {
                Encoder::Mlp { input, layers } => {
                    let running = self.norm_stats.layers.get(i).map(Vec::as_slice);
                    let enc = encode_mlp(
                        *input,
                        layers,
                        &column,
                        cfg.normalization,
                        mode,
                        running,
                        dropout.encoder,
                        &mut fnoise,
                        &mut layer_draws,
                    )?;
                    if !enc.stats.is_empty() {
                        batch_stats.push(enc.stats);
                    }
                    (enc.latent, enc.cache)
                }
                Encoder::Lookup(t) => (encode_lookup(t, &column), EncoderCache::Lookup),
            };
            check(&latent, "encoder")?;
            let outputs = self.expert_outputs(i, &latent);
            check(&outputs, "experts")?;
            let mask = if train {
                fnoise.expert_mask(b, k, dropout.expert)
            } else {
                None
            };
            let dropped = match &mask {
                Some(m) => {
                    let mut o = outputs.clone();
                    for (v, s) in o.data_mut().iter_mut().zip(m.data()) {
                        *v *= s;
                    }
                    o
                }
                None => outputs.clone(),
            };
            draws.encoder_dropout.push(layer_draws);
            draws.expert_dropout.push(mask);
            encodings.push(latent);
            caches.push(cache);
            expert_outputs.push(outputs);
            dropped_outputs.push(dropped);
        }

        let mut gate_logits = Matrix::zeros(b, n * k);
        match &self.params.gating {
            Gating::Full(w) => {
                let mut z = Matrix::zeros(b, n * d);
                for (i, e) in encodings.iter().enumerate() {
                    for t in 0..b {
                        z.row_mut(t)[i * d..(i + 1) * d].copy_from_slice(e.row(t));
                    }
                }
                gemm(1.0, &z, false, w, false, 0.0, &mut gate_logits);
            }
            Gating::Diagonal(blocks) => {
                for (j, block) in blocks.iter().enumerate() {
                    let phi = matmul_nn(&encodings[j], block);
                    for t in 0..b {
                        gate_logits.row_mut(t)[j * k..(j + 1) * k].copy_from_slice(phi.row(t));
                    }
                }
            }
        }
        gate_logits.add_row_broadcast(self.params.gate_bias.data());
        check(&gate_logits, "gating")?;

        let gumbel_train = train && cfg.variant == Variant::Diagonal;
        let temperature = if gumbel_train { cfg.gumbel_tau } else { 1.0 };
        if gumbel_train {
            draws.gumbel = match &mut noise {
                Noise::Off => None,
                Noise::Sample(rng) => Some(crate::numerics::sample_gumbel(rng, b, n * k)),
                Noise::Replay(dr) => dr.gumbel.clone(),
            };
        }
        if let Some(det) = detached {
            if det.rows() != b || det.cols() != n * k {
                return Err(NaeError::usage("detached logits have the wrong shape"));
            }
        }

        let mut active = vec![false; b * n * k];
        let mut relevances = Matrix::zeros(b, n * k);
        let mut eff = vec![0.0; k];
        for t in 0..b {
            for j in 0..n {
                let span = j * k..(j + 1) * k;
                let logits = &gate_logits.row(t)[span.clone()];
                let act = &mut active[t * n * k + j * k..t * n * k + (j + 1) * k];
                top_c_into(logits, cfg.n_active, act);
                match cfg.variant {
                    Variant::Even => match detached {
                        Some(det) => {
                            for ((e, l), s) in eff.iter_mut().zip(logits).zip(&det.row(t)[span.clone()]) {
                                *e = l - s;
                            }
                        }
                        None => eff.iter_mut().for_each(|e| *e = 0.0),
                    },
                    Variant::Diagonal if gumbel_train => {
                        eff.copy_from_slice(logits);
                        // Noise only touches active entries; masked ones are skipped below.
                        if let Some(g) = &draws.gumbel {
                            for (e, gv) in eff.iter_mut().zip(&g.row(t)[span.clone()]) {
                                *e += gv;
                            }
                        }
                    }
                    _ => eff.copy_from_slice(logits),
                }
                softmax_masked_into(&eff, act, temperature, &mut relevances.row_mut(t)[span]);
            }
        }
        check(&relevances, "relevance")?;

        let mut contributions = Matrix::zeros(b, n);
        let mut predictions = Vec::with_capacity(b);
        for t in 0..b {
            let mut y = self.params.intercept;
            for j in 0..n {
                let o = aggregate(dropped_outputs[j].row(t), &relevances.row(t)[j * k..(j + 1) * k]);
                contributions.set(t, j, o);
                y += o;
            }
            predictions.push(y);
        }
        check(&contributions, "aggregation")?;
        if predictions.iter().any(|v| !v.is_finite()) {
            return Err(NaeError::numerical("prediction"));
        }

        Ok(BatchTrace {
            mode,
            inputs: x.clone(),
            encodings,
            expert_outputs,
            dropped_outputs,
            gate_logits,
            active,
            relevances,
            temperature,
            contributions,
            predictions,
            draws,
            caches,
            batch_stats,
        })
    }

    /// Eval-mode predictions for every row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(x.rows());
        let idx: Vec<usize> = (0..x.rows()).collect();
        for chunk in idx.chunks(CHUNK) {
            let t = self.forward_batch(&x.select_rows(chunk), Mode::Eval, Dropout::default(), Noise::Off)?;
            out.extend(t.predictions);
        }
        Ok(out)
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_norm_stats(&mut self, trace: &BatchTrace) {
        if self.config.normalization != Normalization::BatchNorm || trace.batch_stats.is_empty() {
            return;
        }
        let m = super::params::BATCH_NORM_MOMENTUM;
        let mlp_features: Vec<usize> = self
            .params
            .encoders
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, Encoder::Mlp { .. }))
            .map(|(i, _)| i)
            .collect();
        for (stats, &i) in trace.batch_stats.iter().zip(&mlp_features) {
            for (running, batch) in self.norm_stats.layers[i].iter_mut().zip(stats) {
                for (r, v) in running.mean.iter_mut().zip(&batch.mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in running.var.iter_mut().zip(&batch.var) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
        }
    }
}
