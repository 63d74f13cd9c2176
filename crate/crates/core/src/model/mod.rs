//! Model configuration, parameters and the forward pass.

mod config;
mod forward;
mod params;

pub use config::{count_extra_params, EncoderInput, ModelConfig, Normalization, Variant};
pub use forward::{BatchTrace, Draws, Dropout, ForwardTrace, Mode, Noise};
pub(crate) use forward::{aggregate, category_code, EncoderCache};
pub use params::{
    init_params, Encoder, ExpertHeads, Gating, Linear, LookupTable, MlpLayer, NaeParams, NormAffine, NormStats,
    RunningStats, BATCH_NORM_MOMENTUM, NORM_EPS,
};
pub(crate) use params::layer_width;

use serde::{Deserialize, Serialize};

use crate::error::{NaeError, Result};
use crate::numerics::{Matrix, SeededRng};

/// A configured model: hyperparameters, learnable parameters and batch-norm state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nae {
    pub config: ModelConfig,
    pub params: NaeParams,
    #[serde(default)]
    pub norm_stats: NormStats,
}

impl Nae {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let params = init_params(&config, rng)?;
        let norm_stats = NormStats::fresh(&config);
        Ok(Nae {
            config,
            params,
            norm_stats,
        })
    }

    /// Wraps existing parameters after checking every shape against `config`.
    pub fn from_parts(config: ModelConfig, params: NaeParams, norm_stats: NormStats) -> Result<Self> {
        config.validate()?;
        let nae = Nae {
            config,
            params,
            norm_stats,
        };
        nae.check_shapes()?;
        Ok(nae)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let cfg = &self.config;
        let (n, d, k) = (cfg.n_features, cfg.latent_dim, cfg.n_experts);
        let bad = |what: String| Err(NaeError::config(format!("parameter shape mismatch: {what}")));
        if self.params.encoders.len() != n || self.params.experts.len() != n {
            return bad(format!("expected {n} encoders and expert heads"));
        }
        for (i, enc) in self.params.encoders.iter().enumerate() {
            match enc {
                Encoder::Mlp { input, layers } => {
                    if *input != cfg.inputs[i] {
                        return bad(format!("encoder {i} input type"));
                    }
                    if layers.len() != cfg.encoder_layers {
                        return bad(format!("encoder {i} has {} layers", layers.len()));
                    }
                    for (l, layer) in layers.iter().enumerate() {
                        let rows = match (l, input) {
                            (0, EncoderInput::Continuous) => 1,
                            (0, EncoderInput::Categorical(c)) => *c,
                            _ => cfg.encoder_hidden,
                        };
                        let w = layer_width(cfg, l);
                        let lin = &layer.linear;
                        if lin.weight.rows() != rows
                            || lin.weight.cols() != w
                            || lin.bias.len() != w
                            || layer.norm.gain.len() != w
                            || layer.norm.shift.len() != w
                        {
                            return bad(format!("encoder {i} layer {l}"));
                        }
                    }
                }
                Encoder::Lookup(t) => {
                    if t.table.cols() != d {
                        return bad(format!("lookup encoder {i} width"));
                    }
                }
            }
        }
        for (i, h) in self.params.experts.iter().enumerate() {
            if h.weight.rows() != d || h.weight.cols() != k || h.bias.len() != k {
                return bad(format!("expert heads {i}"));
            }
        }
        match (&self.params.gating, cfg.variant) {
            (Gating::Full(w), Variant::Standard | Variant::Even) => {
                if w.rows() != n * d || w.cols() != n * k {
                    return bad("gate matrix".into());
                }
            }
            (Gating::Diagonal(blocks), Variant::Diagonal) => {
                if blocks.len() != n || blocks.iter().any(|b| b.rows() != d || b.cols() != k) {
                    return bad("diagonal gate blocks".into());
                }
            }
            _ => return bad("gating layout does not match the variant".into()),
        }
        if self.params.gate_bias.len() != n * k {
            return bad("gate bias".into());
        }
        if cfg.normalization == Normalization::BatchNorm {
            for (i, enc) in self.params.encoders.iter().enumerate() {
                if let Encoder::Mlp { .. } = enc {
                    let ok = self.norm_stats.layers.get(i).is_some_and(|ls| {
                        ls.len() == cfg.encoder_layers
                            && ls
                                .iter()
                                .enumerate()
                                .all(|(l, s)| s.mean.len() == layer_width(cfg, l) && s.var.len() == layer_width(cfg, l))
                    });
                    if !ok {
                        return bad(format!("batch norm statistics of encoder {i}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Learned bias `μ_j` of feature j's gate.
    pub fn gate_bias(&self, j: usize) -> &[f64] {
        self.params.gate_bias_of(&self.config, j)
    }

    /// Expert outputs at `x` together with the per-sample bounds `(max_k, min_k)`.
    pub fn feature_bounds(&self, i: usize, values: &[f64]) -> Result<(Matrix, Vec<(f64, f64)>)> {
        let e = self.encode_feature(i, values)?;
        let o = self.expert_outputs(i, &e);
        let bounds = (0..o.rows())
            .map(|t| {
                let row = o.row(t);
                let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
                (hi, lo)
            })
            .collect();
        Ok((o, bounds))
    }

    /// Isolated interaction surface `o_i′(x_i, x_j)`: feature i's gate sees only
    /// `A_jiᵀ E_j(x_j)` (no bias, no other features). Rows follow `grid_i`.
    pub fn pairwise_interaction(&self, i: usize, j: usize, grid_i: &[f64], grid_j: &[f64]) -> Result<Matrix> {
        let n = self.config.n_features;
        if i == j {
            return Err(NaeError::usage("pairwise interaction needs two distinct features"));
        }
        if i >= n || j >= n {
            return Err(NaeError::usage(format!("feature index out of range for {n} features")));
        }
        let outputs = self.expert_outputs(i, &self.encode_feature(i, grid_i)?);
        let logits = self.gate_term(j, i, &self.encode_feature(j, grid_j)?);
        let mut surface = Matrix::zeros(grid_i.len(), grid_j.len());
        for b in 0..grid_j.len() {
            let r = self.relevance_eval(logits.row(b));
            for a in 0..grid_i.len() {
                surface.set(a, b, aggregate(outputs.row(a), &r));
            }
        }
        if !surface.is_finite() {
            return Err(NaeError::numerical("interaction"));
        }
        Ok(surface)
    }
}
