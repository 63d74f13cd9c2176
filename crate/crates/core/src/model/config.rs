use serde::{Deserialize, Serialize};

use crate::error::{NaeError, Result};

/// How the gate logits of a feature are formed and turned into relevances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Every feature's encoding feeds every feature's gate; masked softmax relevances.
    Standard,
    /// Block-diagonal gating (each feature gates itself), Gumbel-softmax resampling in training.
    Diagonal,
    /// Uniform weight over the active experts, gradients through a detached softmax.
    Even,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    LayerNorm,
    BatchNorm,
}

/// Encoder input type of one feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInput {
    Continuous,
    /// Integer codes `0..cardinality`, each mapped to a learned embedding.
    Categorical(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_features: usize,
    pub latent_dim: usize,
    pub n_experts: usize,
    pub n_active: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub variant: Variant,
    pub gumbel_tau: f64,
    pub normalization: Normalization,
    /// One entry per feature.
    pub inputs: Vec<EncoderInput>,
}

impl ModelConfig {
    /// Standard-variant config over `n_features` continuous inputs with dense routing (C = K).
    pub fn new(n_features: usize, latent_dim: usize, n_experts: usize) -> Self {
        ModelConfig {
            n_features,
            latent_dim,
            n_experts,
            n_active: n_experts,
            encoder_layers: 3,
            encoder_hidden: 32,
            variant: Variant::Standard,
            gumbel_tau: 0.1,
            normalization: Normalization::LayerNorm,
            inputs: vec![EncoderInput::Continuous; n_features],
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_active(mut self, n_active: usize) -> Self {
        self.n_active = n_active;
        self
    }

    pub fn with_encoder(mut self, layers: usize, hidden: usize) -> Self {
        self.encoder_layers = layers;
        self.encoder_hidden = hidden;
        self
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_inputs(mut self, inputs: Vec<EncoderInput>) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(NaeError::config("n_features must be at least 1"));
        }
        if self.latent_dim == 0 {
            return Err(NaeError::config("latent_dim must be at least 1"));
        }
        if self.encoder_layers == 0 {
            return Err(NaeError::config("encoder_layers must be at least 1"));
        }
        if self.encoder_layers > 1 && self.encoder_hidden == 0 {
            return Err(NaeError::config("encoder_hidden must be at least 1"));
        }
        if self.n_active == 0 || self.n_active > self.n_experts {
            return Err(NaeError::config(format!(
                "n_active must satisfy 1 <= C <= K = {}, got {}",
                self.n_experts, self.n_active
            )));
        }
        if self.variant == Variant::Diagonal && !(self.gumbel_tau > 0.0 && self.gumbel_tau.is_finite()) {
            return Err(NaeError::config("gumbel_tau must be positive for the diagonal variant"));
        }
        if self.inputs.len() != self.n_features {
            return Err(NaeError::config(format!(
                "{} encoder inputs for {} features",
                self.inputs.len(),
                self.n_features
            )));
        }
        if let Some(i) = self
            .inputs
            .iter()
            .position(|inp| *inp == EncoderInput::Categorical(0))
        {
            return Err(NaeError::config(format!("categorical feature {i} has no levels")));
        }
        Ok(())
    }

    /// Width of the concatenated latent vector feeding the full gate.
    pub fn total_latent(&self) -> usize {
        self.n_features * self.latent_dim
    }

    pub fn total_experts(&self) -> usize {
        self.n_features * self.n_experts
    }
}

/// Parameters added on top of a single-head additive model: gate matrices, gate
/// biases and the K expert heads.
///
/// Standard and even variants: `nK[(n+1)d + 2]`; diagonal: `nK(2d + 2)`.
pub fn count_extra_params(config: &ModelConfig) -> usize {
    let n = config.n_features;
    let k = config.n_experts;
    let d = config.latent_dim;
    match config.variant {
        Variant::Standard | Variant::Even => n * k * ((n + 1) * d + 2),
        Variant::Diagonal => n * k * (2 * d + 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn housing_counts() {
        let std = ModelConfig::new(8, 128, 4);
        assert_eq!(count_extra_params(&std), 36_928);
        let diag = ModelConfig::new(8, 128, 64).with_variant(Variant::Diagonal);
        assert_eq!(count_extra_params(&diag), 132_096);
    }

    #[test]
    fn year_count_follows_formula() {
        // 90·4·(91·128 + 2); reported as "4.2M".
        let cfg = ModelConfig::new(90, 128, 4);
        assert_eq!(count_extra_params(&cfg), 4_194_000);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::new(2, 4, 3).validate().is_ok());
        assert!(ModelConfig::new(2, 4, 3).with_active(0).validate().is_err());
        assert!(ModelConfig::new(2, 4, 3).with_active(4).validate().is_err());
        let mut diag = ModelConfig::new(2, 4, 3).with_variant(Variant::Diagonal);
        diag.gumbel_tau = 0.0;
        assert!(diag.validate().is_err());
        assert!(ModelConfig::new(2, 0, 3).validate().is_err());
        let bad = ModelConfig::new(2, 4, 3).with_inputs(vec![EncoderInput::Continuous]);
        assert!(bad.validate().is_err());
    }
}
