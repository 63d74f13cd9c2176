use serde::{Deserialize, Serialize};

use super::config::{EncoderInput, ModelConfig, Normalization, Variant};
use crate::error::{NaeError, Result};
use crate::numerics::{Matrix, SeededRng};

/// Affine layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

/// Learned gain and shift of a normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormAffine {
    pub gain: Matrix,
    pub shift: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub linear: Linear,
    pub norm: NormAffine,
}

/// Piecewise-linear table on `knots` equally spaced points of `[lo, hi]`.
///
/// Inputs outside the range are clamped to the end rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub lo: f64,
    pub hi: f64,
    /// `knots × latent_dim`
    pub table: Matrix,
}

impl LookupTable {
    pub fn new(lo: f64, hi: f64, table: Matrix) -> Result<Self> {
        if table.rows() == 0 || !(hi >= lo) || (table.rows() > 1 && hi == lo) {
            return Err(NaeError::config("lookup table needs knots over a non-empty range"));
        }
        Ok(LookupTable { lo, hi, table })
    }

    /// Tabulates `f` on the knots.
    pub fn tabulate(lo: f64, hi: f64, knots: usize, width: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut table = Matrix::zeros(knots, width);
        for k in 0..knots {
            let x = knot_position(lo, hi, knots, k);
            let v = f(x);
            if v.len() != width {
                return Err(NaeError::config("lookup row has the wrong width"));
            }
            table.row_mut(k).copy_from_slice(&v);
        }
        LookupTable::new(lo, hi, table)
    }

    pub fn knots(&self) -> usize {
        self.table.rows()
    }

    pub fn knot(&self, k: usize) -> f64 {
        knot_position(self.lo, self.hi, self.knots(), k)
    }

    /// Lower knot index and interpolation weight of the upper knot.
    pub(crate) fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.knots() - 1;
        if last == 0 {
            return (0, 0.0);
        }
        let t = ((x - self.lo) / (self.hi - self.lo) * last as f64).clamp(0.0, last as f64);
        let nearest = t.round();
        // Inputs sitting on a knot read that row exactly.
        if (t - nearest).abs() < 1e-9 {
            return (nearest as usize, 0.0);
        }
        let k = (t.floor() as usize).min(last - 1);
        (k, t - k as f64)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let (k, w) = self.locate(x);
        let lo_row = self.table.row(k);
        if w == 0.0 {
            out.copy_from_slice(lo_row);
        } else {
            let hi_row = self.table.row(k + 1);
            for ((o, a), b) in out.iter_mut().zip(lo_row).zip(hi_row) {
                *o = a + w * (b - a);
            }
        }
    }
}

pub(crate) fn knot_position(lo: f64, hi: f64, knots: usize, k: usize) -> f64 {
    if knots <= 1 {
        lo
    } else if k + 1 == knots {
        hi
    } else {
        lo + (hi - lo) * k as f64 / (knots - 1) as f64
    }
}

/// Per-feature map from a raw value to the latent space `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    /// Linear → normalization → ReLU stack; the last layer has width `d`.
    Mlp { input: EncoderInput, layers: Vec<MlpLayer> },
    Lookup(LookupTable),
}

/// The K linear expert heads of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertHeads {
    /// `d × K`
    pub weight: Matrix,
    /// `1 × K`
    pub bias: Matrix,
}

/// Gate matrices `A_ij ∈ R^{d×K}` (source feature i, gated feature j).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// All blocks, stacked as an `nd × nK` matrix with `A_ij` at rows `i·d..`, cols `j·K..`.
    Full(Matrix),
    /// Only the diagonal blocks `A_jj`; off-diagonal blocks do not exist.
    Diagonal(Vec<Matrix>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaeParams {
    pub encoders: Vec<Encoder>,
    pub experts: Vec<ExpertHeads>,
    pub gating: Gating,
    /// `1 × nK`: the bias `μ_j` of feature j sits at columns `j·K..(j+1)·K`.
    pub gate_bias: Matrix,
    pub intercept: f64,
}

/// Running batch-norm statistics, one `(mean, var)` pair per encoder layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub layers: Vec<Vec<RunningStats>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

impl NaeParams {
    /// Gate block `A_ij`; zero for off-diagonal blocks of the diagonal variant.
    pub fn gate_block(&self, config: &ModelConfig, i: usize, j: usize) -> Matrix {
        let d = config.latent_dim;
        let k = config.n_experts;
        match &self.gating {
            Gating::Full(w) => Matrix::from_fn(d, k, |r, c| w.get(i * d + r, j * k + c)),
            Gating::Diagonal(blocks) => {
                if i == j {
                    blocks[j].clone()
                } else {
                    Matrix::zeros(d, k)
                }
            }
        }
    }

    pub fn gate_bias_of(&self, config: &ModelConfig, j: usize) -> &[f64] {
        let k = config.n_experts;
        &self.gate_bias.data()[j * k..(j + 1) * k]
    }

    /// Sizes of the gate matrices, gate biases and expert heads as stored.
    pub fn extra_param_count(&self) -> usize {
        let gate = match &self.gating {
            Gating::Full(w) => w.len(),
            Gating::Diagonal(blocks) => blocks.iter().map(Matrix::len).sum(),
        };
        let heads: usize = self.experts.iter().map(|h| h.weight.len() + h.bias.len()).sum();
        gate + self.gate_bias.len() + heads
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every learnable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, enc) in self.encoders.iter().enumerate() {
            match enc {
                Encoder::Mlp { layers, .. } => {
                    for (l, layer) in layers.iter().enumerate() {
                        out.push((format!("encoder[{i}].layer[{l}].weight"), layer.linear.weight.data()));
                        out.push((format!("encoder[{i}].layer[{l}].bias"), layer.linear.bias.data()));
                        out.push((format!("encoder[{i}].layer[{l}].norm_gain"), layer.norm.gain.data()));
                        out.push((format!("encoder[{i}].layer[{l}].norm_shift"), layer.norm.shift.data()));
                    }
                }
                Encoder::Lookup(t) => out.push((format!("encoder[{i}].table"), t.table.data())),
            }
        }
        for (i, h) in self.experts.iter().enumerate() {
            out.push((format!("experts[{i}].weight"), h.weight.data()));
            out.push((format!("experts[{i}].bias"), h.bias.data()));
        }
        match &self.gating {
            Gating::Full(w) => out.push(("gating".to_string(), w.data())),
            Gating::Diagonal(blocks) => {
                for (j, b) in blocks.iter().enumerate() {
                    out.push((format!("gating[{j}]"), b.data()));
                }
            }
        }
        out.push(("gate_bias".to_string(), self.gate_bias.data()));
        out.push(("intercept".to_string(), std::slice::from_ref(&self.intercept)));
        out
    }

    /// Mutable view of [`NaeParams::tensors`], same order and names.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            match enc {
                Encoder::Mlp { layers, .. } => {
                    for (l, layer) in layers.iter_mut().enumerate() {
                        out.push((format!("encoder[{i}].layer[{l}].weight"), layer.linear.weight.data_mut()));
                        out.push((format!("encoder[{i}].layer[{l}].bias"), layer.linear.bias.data_mut()));
                        out.push((format!("encoder[{i}].layer[{l}].norm_gain"), layer.norm.gain.data_mut()));
                        out.push((format!("encoder[{i}].layer[{l}].norm_shift"), layer.norm.shift.data_mut()));
                    }
                }
                Encoder::Lookup(t) => out.push((format!("encoder[{i}].table"), t.table.data_mut())),
            }
        }
        for (i, h) in self.experts.iter_mut().enumerate() {
            out.push((format!("experts[{i}].weight"), h.weight.data_mut()));
            out.push((format!("experts[{i}].bias"), h.bias.data_mut()));
        }
        match &mut self.gating {
            Gating::Full(w) => out.push(("gating".to_string(), w.data_mut())),
            Gating::Diagonal(blocks) => {
                for (j, b) in blocks.iter_mut().enumerate() {
                    out.push((format!("gating[{j}]"), b.data_mut()));
                }
            }
        }
        out.push(("gate_bias".to_string(), self.gate_bias.data_mut()));
        out.push(("intercept".to_string(), std::slice::from_mut(&mut self.intercept)));
        out
    }

    /// Same structure with every entry set to zero.
    pub fn zeros_like(&self) -> NaeParams {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

impl NormStats {
    pub fn fresh(config: &ModelConfig) -> Self {
        if config.normalization != Normalization::BatchNorm {
            return NormStats::default();
        }
        let layers = (0..config.n_features)
            .map(|_| {
                (0..config.encoder_layers)
                    .map(|l| {
                        let w = layer_width(config, l);
                        RunningStats {
                            mean: vec![0.0; w],
                            var: vec![1.0; w],
                        }
                    })
                    .collect()
            })
            .collect();
        NormStats { layers }
    }
}

pub(crate) fn layer_width(config: &ModelConfig, l: usize) -> usize {
    if l + 1 == config.encoder_layers {
        config.latent_dim
    } else {
        config.encoder_hidden
    }
}

fn normal_matrix(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}

/// Fresh parameters: weights `N(0, 1/fan_in)`, encoder biases `U(±1/√fan_in)`,
/// head and gate biases and the intercept zero.
///
/// Diagonal variants allocate only the diagonal gate blocks.
pub fn init_params(config: &ModelConfig, rng: &mut SeededRng) -> Result<NaeParams> {
    config.validate()?;
    let n = config.n_features;
    let d = config.latent_dim;
    let k = config.n_experts;

    let mut encoders = Vec::with_capacity(n);
    for &input in &config.inputs {
        let mut layers = Vec::with_capacity(config.encoder_layers);
        for l in 0..config.encoder_layers {
            let (rows, fan_in) = if l == 0 {
                match input {
                    EncoderInput::Continuous => (1, 1),
                    // Embedding rows: exactly one is read per sample.
                    EncoderInput::Categorical(card) => (card, 1),
                }
            } else {
                (config.encoder_hidden, config.encoder_hidden)
            };
            let width = layer_width(config, l);
            let std = 1.0 / (fan_in as f64).sqrt();
            let weight = normal_matrix(rng, rows, width, std);
            let bias = Matrix::from_fn(1, width, |_, _| rng.uniform(-std, std));
            layers.push(MlpLayer {
                linear: Linear { weight, bias },
                norm: NormAffine {
                    gain: Matrix::filled(1, width, 1.0),
                    shift: Matrix::zeros(1, width),
                },
            });
        }
        encoders.push(Encoder::Mlp { input, layers });
    }

    let head_std = 1.0 / (d as f64).sqrt();
    let experts = (0..n)
        .map(|_| ExpertHeads {
            weight: normal_matrix(rng, d, k, head_std),
            bias: Matrix::zeros(1, k),
        })
        .collect();

    let gating = match config.variant {
        Variant::Standard | Variant::Even => {
            let std = 1.0 / ((n * d) as f64).sqrt();
            Gating::Full(normal_matrix(rng, n * d, n * k, std))
        }
        Variant::Diagonal => Gating::Diagonal((0..n).map(|_| normal_matrix(rng, d, k, head_std)).collect()),
    };

    Ok(NaeParams {
        encoders,
        experts,
        gating,
        gate_bias: Matrix::zeros(1, n * k),
        intercept: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::population_variance;

    #[test]
    fn same_seed_same_params() {
        let cfg = ModelConfig::new(3, 4, 2);
        let a = init_params(&cfg, &mut SeededRng::new(1)).unwrap();
        let b = init_params(&cfg, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diagonal_has_no_cross_blocks() {
        let cfg = ModelConfig::new(3, 4, 2).with_variant(Variant::Diagonal);
        let p = init_params(&cfg, &mut SeededRng::new(1)).unwrap();
        assert!(matches!(p.gating, Gating::Diagonal(ref b) if b.len() == 3));
        assert!(p.gate_block(&cfg, 0, 1).data().iter().all(|&v| v == 0.0));
        assert!(p.gate_block(&cfg, 1, 1).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn encoder_weight_std_matches_fan_in() {
        let cfg = ModelConfig::new(1, 4, 1).with_encoder(3, 128);
        let p = init_params(&cfg, &mut SeededRng::new(9)).unwrap();
        let Encoder::Mlp { layers, .. } = &p.encoders[0] else { unreachable!() };
        let w = layers[1].linear.weight.data();
        assert!(w.len() >= 10_000);
        let std = population_variance(w).sqrt();
        let want = 1.0 / 128f64.sqrt();
        assert!((std / want - 1.0).abs() < 0.2, "std {std} vs {want}");
    }

    #[test]
    fn biases_and_intercept_start_at_zero() {
        let cfg = ModelConfig::new(2, 3, 2);
        let p = init_params(&cfg, &mut SeededRng::new(4)).unwrap();
        assert_eq!(p.intercept, 0.0);
        assert!(p.gate_bias.data().iter().all(|&v| v == 0.0));
        assert!(p.experts.iter().all(|h| h.bias.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn runtime_count_matches_formula() {
        for variant in [Variant::Standard, Variant::Diagonal, Variant::Even] {
            let cfg = ModelConfig::new(5, 6, 3).with_variant(variant);
            let p = init_params(&cfg, &mut SeededRng::new(0)).unwrap();
            assert_eq!(p.extra_param_count(), super::super::count_extra_params(&cfg));
        }
    }

    #[test]
    fn lookup_reads_knots_exactly() {
        let t = LookupTable::tabulate(0.0, 1.0, 101, 1, |x| vec![x * x]).unwrap();
        let mut out = [0.0];
        for k in 0..101 {
            let x = k as f64 / 100.0;
            t.eval_into(x, &mut out);
            assert_eq!(out[0], t.table.get(k, 0));
        }
        t.eval_into(0.005, &mut out);
        assert!((out[0] - 0.5 * (0.0 + 0.0001)).abs() < 1e-15);
        t.eval_into(-3.0, &mut out);
        assert_eq!(out[0], 0.0);
    }
}
