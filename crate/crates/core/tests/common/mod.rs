#![allow(dead_code)]

use nae_core::data::Task;
use nae_core::model::{Dropout, Mode, ModelConfig, Nae, Noise};
use nae_core::numerics::{Matrix, SeededRng};
use nae_core::training::{backward, objective, LossWeights};

/// Largest per-group relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between the
/// analytic gradient and central differences, with all random draws frozen.
pub struct GradCheck {
    pub worst: f64,
    pub groups: Vec<(String, f64, f64)>,
}

pub fn grad_check(nae: &Nae, x: &Matrix, y: &[f64], w: &LossWeights, dropout: Dropout, h: f64) -> GradCheck {
    let mut rng = SeededRng::new(77);
    let base = nae
        .forward_batch(x, Mode::Train, dropout, Noise::Sample(&mut rng))
        .expect("forward");
    let draws = base.draws.clone();
    let detached = base.gate_logits.clone();
    let analytic = backward(nae, &base, y, w).expect("backward");

    let loss = |m: &Nae| -> f64 {
        let t = m
            .forward_batch_detached(x, Mode::Train, dropout, Noise::Replay(&draws), Some(&detached))
            .expect("forward");
        objective(&t, y, w).expect("loss").total
    };

    let names: Vec<String> = nae.params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut groups = Vec::new();
    let mut worst: f64 = 0.0;
    for (gi, name) in names.iter().enumerate() {
        let len = nae.params.tensors()[gi].1.len();
        let a = analytic.tensors()[gi].1.to_vec();
        let mut numeric = vec![0.0; len];
        for e in 0..len {
            let mut plus = nae.clone();
            plus.params.tensors_mut()[gi].1[e] += h;
            let mut minus = nae.clone();
            minus.params.tensors_mut()[gi].1[e] -= h;
            numeric[e] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-10 { diff } else { diff / scale };
        worst = worst.max(rel);
        groups.push((name.clone(), rel, scale));
    }
    GradCheck { worst, groups }
}

/// Small random instance: inputs, targets and a model with every gate entry live.
pub fn small_instance(config: ModelConfig, batch: usize, seed: u64, task: Task) -> (Nae, Matrix, Vec<f64>) {
    let mut rng = SeededRng::new(seed);
    let mut nae = Nae::new(config.clone(), &mut rng).expect("model");
    for v in nae.params.gate_bias.data_mut() {
        *v = 0.3 * rng.normal();
    }
    for h in &mut nae.params.experts {
        for v in h.bias.data_mut() {
            *v = 0.2 * rng.normal();
        }
    }
    nae.params.intercept = 0.1;
    let x = Matrix::from_fn(batch, config.n_features, |_, c| match config.inputs[c] {
        nae_core::model::EncoderInput::Continuous => rng.uniform(-1.5, 1.5),
        nae_core::model::EncoderInput::Categorical(card) => rng.below(card) as f64,
    });
    let y = (0..batch)
        .map(|_| match task {
            Task::Regression => rng.normal(),
            Task::BinaryClassification => rng.below(2) as f64,
        })
        .collect();
    (nae, x, y)
}
