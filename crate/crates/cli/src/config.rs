use std::path::{Path, PathBuf};

use nae_core::data::{CsvSchema, SimKind, SimSpec, SplitFractions};
use nae_core::metrics::MetricsConfig;
use nae_core::model::{ModelConfig, Normalization, Variant};
use nae_core::training::TrainConfig;
use nae_core::{NaeError, Result};
use serde::{Deserialize, Serialize};

/// A training run: data source, hyperparameters, metric settings, seed and output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulation(SimSource),
    Csv { path: PathBuf, schema: CsvSchema },
}

/// Simulation settings; the seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSource {
    pub kind: SimKind,
    pub n_samples: usize,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub minority_fraction: Option<f64>,
    #[serde(default)]
    pub cf: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub split: SplitFractions,
}

impl SimSource {
    pub fn spec(&self, seed: u64) -> SimSpec {
        let mut spec = SimSpec::new(self.kind, self.n_samples, seed);
        if let Some(s) = self.sigma {
            spec.sigma = s;
        }
        spec.minority_fraction = self.minority_fraction;
        spec.cf = self.cf;
        spec.rho = self.rho;
        spec.split = self.split;
        spec
    }
}

/// Flat hyperparameter block, keys named as in the published hyperparameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    /// Encoder layers.
    pub layers: usize,
    pub hidden_dimension: usize,
    pub total_experts: usize,
    /// Defaults to `total_experts`.
    #[serde(default)]
    pub activated_experts: Option<usize>,
    pub batch_size: usize,
    /// Epochs.
    pub max_iteration: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub dropout_expert: f64,
    #[serde(default)]
    pub output_penalty: f64,
    pub variation_penalty: f64,
    #[serde(default = "default_normalization")]
    pub normalization: Normalization,
    /// Width of each feature's encoding; defaults to `hidden_dimension`.
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_tau")]
    pub gumbel_tau: f64,
}

fn default_normalization() -> Normalization {
    Normalization::LayerNorm
}

fn default_variant() -> Variant {
    Variant::Standard
}

fn default_tau() -> f64 {
    0.1
}

impl Hyperparameters {
    /// Model template; feature count and input types are filled from the data.
    pub fn model_config(&self) -> ModelConfig {
        let d = self.latent_dim.unwrap_or(self.hidden_dimension);
        let mut cfg = ModelConfig::new(0, d, self.total_experts)
            .with_active(self.activated_experts.unwrap_or(self.total_experts))
            .with_encoder(self.layers, self.hidden_dimension)
            .with_variant(self.variant)
            .with_normalization(self.normalization);
        cfg.gumbel_tau = self.gumbel_tau;
        cfg
    }

    pub fn train_config(&self, task: nae_core::data::Task, seed: u64) -> TrainConfig {
        TrainConfig {
            task,
            lambda_var: self.variation_penalty,
            output_penalty: self.output_penalty,
            weight_decay: self.weight_decay,
            learning_rate: self.learning_rate,
            max_iterations: self.max_iteration,
            batch_size: self.batch_size,
            dropout: self.dropout,
            dropout_expert: self.dropout_expert,
            seed,
        }
    }
}

impl RunConfig {
    /// Parses and validates; relative data paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NaeError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| NaeError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Csv { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperparameters;
        let mut model = h.model_config();
        model.n_features = 1;
        model.inputs = vec![nae_core::model::EncoderInput::Continuous];
        model.validate()?;
        h.train_config(nae_core::data::Task::Regression, self.seed).validate()?;
        self.metrics.validate()?;
        if let DataSource::Simulation(s) = &self.data {
            s.spec(self.seed).validate()?;
        }
        Ok(())
    }
}
