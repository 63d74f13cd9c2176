use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{split_rows, Dataset, FeatureKind, SplitFractions, Task};
use crate::error::{NaeError, Result};
use crate::numerics::{Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimKind {
    /// `y = x₁ − ½ + sin(4πx₁) + ε`.
    Unimodal,
    /// Sign of the sine term flips with `x₂ ∈ {−1, +1}`.
    Multimodal,
    /// Multimodal with `P(x₂ = 1) = minority_fraction`.
    Sparsity,
    /// `y = x₁ − ½ + (1/CF) Σ xᵢ sin(4πx₁) + ε` over `CF` binary features.
    Modality,
    /// `P(x₂ = 1 | x₁) = ρx₁ + (1−ρ)/2`, `y = x₂ sin(4πx₁) + x₂ + ε`.
    Correlated,
    /// `y = 2 sin(πx₁) cos(πx₂) + ½x₁² + ½x₂² + ε` on `[−1, 1]²`.
    GenericInteraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub kind: SimKind,
    pub n_samples: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub minority_fraction: Option<f64>,
    #[serde(default)]
    pub cf: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: SplitFractions,
}

fn default_sigma() -> f64 {
    0.1
}

impl SimSpec {
    pub fn new(kind: SimKind, n_samples: usize, seed: u64) -> Self {
        SimSpec {
            kind,
            n_samples,
            sigma: if kind == SimKind::Modality { 0.01 } else { 0.1 },
            minority_fraction: None,
            cf: None,
            rho: None,
            seed,
            split: SplitFractions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(NaeError::config("n_samples must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(NaeError::config("sigma must be a finite value >= 0"));
        }
        match self.kind {
            SimKind::Sparsity => match self.minority_fraction {
                Some(f) if f > 0.0 && f <= 1.0 => {}
                Some(f) => return Err(NaeError::config(format!("minority_fraction {f} outside (0, 1]"))),
                None => return Err(NaeError::config("sparsity simulation requires minority_fraction")),
            },
            SimKind::Modality => match self.cf {
                Some(cf) if cf >= 1 => {}
                _ => return Err(NaeError::config("modality simulation requires cf >= 1")),
            },
            SimKind::Correlated => match self.rho {
                Some(r) if (0.0..1.0).contains(&r) => {}
                Some(r) => return Err(NaeError::config(format!("rho {r} outside [0, 1)"))),
                None => return Err(NaeError::config("correlated simulation requires rho")),
            },
            _ => {}
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        match self.kind {
            SimKind::Unimodal => 1,
            SimKind::Modality => 1 + self.cf.unwrap_or(1),
            _ => 2,
        }
    }

    /// Noise-free target at raw feature values (binary features as `±1`).
    pub fn mean(&self, x: &[f64]) -> f64 {
        let s = |x1: f64| (4.0 * PI * x1).sin();
        match self.kind {
            SimKind::Unimodal => x[0] - 0.5 + s(x[0]),
            SimKind::Multimodal | SimKind::Sparsity => x[0] - 0.5 + x[1] * s(x[0]),
            SimKind::Modality => {
                let cf = x.len() - 1;
                x[0] - 0.5 + x[1..].iter().map(|xi| xi * s(x[0])).sum::<f64>() / cf as f64
            }
            SimKind::Correlated => x[1] * s(x[0]) + x[1],
            SimKind::GenericInteraction => {
                2.0 * (PI * x[0]).sin() * (PI * x[1]).cos() + 0.5 * x[0] * x[0] + 0.5 * x[1] * x[1]
            }
        }
    }

    /// Raw values of a stored row: binary codes `0/1` become `−1/+1`.
    pub fn raw_row(&self, stored: &[f64]) -> Vec<f64> {
        stored
            .iter()
            .enumerate()
            .map(|(c, &v)| if self.is_binary(c) { 2.0 * v - 1.0 } else { v })
            .collect()
    }

    fn is_binary(&self, col: usize) -> bool {
        col > 0 && self.kind != SimKind::Unimodal && self.kind != SimKind::GenericInteraction
    }
}

fn sign(rng: &mut SeededRng, p_plus: f64) -> f64 {
    if rng.bernoulli(p_plus) {
        1.0
    } else {
        -1.0
    }
}

/// Samples the simulation; rows are drawn feature by feature, then the noise.
///
/// The split uses its own stream derived from `seed + 1`.
pub fn generate(spec: &SimSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_features();
    let mut rng = SeededRng::derive(spec.seed, 0);
    let mut features = Matrix::zeros(spec.n_samples, n);
    let mut targets = Vec::with_capacity(spec.n_samples);
    let mut raw = vec![0.0; n];
    for t in 0..spec.n_samples {
        match spec.kind {
            SimKind::Unimodal => raw[0] = rng.uniform_open(),
            SimKind::Multimodal => {
                raw[0] = rng.uniform_open();
                raw[1] = sign(&mut rng, 0.5);
            }
            SimKind::Sparsity => {
                raw[0] = rng.uniform_open();
                raw[1] = sign(&mut rng, spec.minority_fraction.unwrap_or(0.5));
            }
            SimKind::Modality => {
                raw[0] = rng.uniform_open();
                for v in raw[1..].iter_mut() {
                    *v = sign(&mut rng, 0.5);
                }
            }
            SimKind::Correlated => {
                let rho = spec.rho.unwrap_or(0.0);
                raw[0] = rng.uniform_open();
                raw[1] = sign(&mut rng, rho * raw[0] + (1.0 - rho) / 2.0);
            }
            SimKind::GenericInteraction => {
                raw[0] = rng.uniform(-1.0, 1.0);
                raw[1] = rng.uniform(-1.0, 1.0);
            }
        }
        let noise = if spec.sigma > 0.0 { spec.sigma * rng.normal() } else { 0.0 };
        targets.push(spec.mean(&raw) + noise);
        for (c, &v) in raw.iter().enumerate() {
            features.set(t, c, if spec.is_binary(c) { (v + 1.0) / 2.0 } else { v });
        }
    }
    let names = (1..=n).map(|i| format!("x{i}")).collect();
    let kinds = (0..n)
        .map(|c| {
            if spec.is_binary(c) {
                FeatureKind::Categorical {
                    levels: vec!["-1".into(), "1".into()],
                }
            } else {
                FeatureKind::Continuous
            }
        })
        .collect();
    let splits = split_rows(spec.n_samples, spec.split, spec.seed.wrapping_add(1))?;
    Dataset::new(names, kinds, features, "y".into(), targets, Task::Regression, splits)
}
