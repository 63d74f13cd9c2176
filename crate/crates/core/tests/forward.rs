mod common;

use common::small_instance;
use nae_core::data::Task;
use nae_core::model::{Dropout, Encoder, EncoderInput, Gating, Mode, ModelConfig, Nae, Noise, Normalization, Variant};
use nae_core::numerics::{Matrix, SeededRng};
use proptest::prelude::*;

/// Straight-line evaluation of one sample from the raw parameter tensors.
fn reference(nae: &Nae, x: &[f64]) -> (Vec<f64>, f64) {
    let cfg = &nae.config;
    let (n, d, k) = (cfg.n_features, cfg.latent_dim, cfg.n_experts);
    let mut enc = Vec::new();
    for i in 0..n {
        let Encoder::Mlp { input, layers } = &nae.params.encoders[i] else { panic!() };
        let mut h: Vec<f64> = Vec::new();
        for (l, layer) in layers.iter().enumerate() {
            let w = &layer.linear.weight;
            let width = w.cols();
            let mut z = vec![0.0; width];
            for c in 0..width {
                z[c] = layer.linear.bias.get(0, c);
                if l == 0 {
                    z[c] += match input {
                        EncoderInput::Continuous => x[i] * w.get(0, c),
                        EncoderInput::Categorical(_) => w.get(x[i] as usize, c),
                    };
                } else {
                    for r in 0..w.rows() {
                        z[c] += h[r] * w.get(r, c);
                    }
                }
            }
            let mean = z.iter().sum::<f64>() / width as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            h = (0..width)
                .map(|c| {
                    let v = layer.norm.gain.get(0, c) * (z[c] - mean) / (var + 1e-5).sqrt() + layer.norm.shift.get(0, c);
                    v.max(0.0)
                })
                .collect();
        }
        enc.push(h);
    }
    let Gating::Full(a) = &nae.params.gating else { panic!() };
    let mut contributions = Vec::new();
    for j in 0..n {
        let heads = &nae.params.experts[j];
        let o: Vec<f64> = (0..k)
            .map(|kk| heads.bias.get(0, kk) + (0..d).map(|r| enc[j][r] * heads.weight.get(r, kk)).sum::<f64>())
            .collect();
        let phi: Vec<f64> = (0..k)
            .map(|kk| {
                let mut v = nae.params.gate_bias.get(0, j * k + kk);
                for i in 0..n {
                    for r in 0..d {
                        v += a.get(i * d + r, j * k + kk) * enc[i][r];
                    }
                }
                v
            })
            .collect();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&p, &q| phi[q].partial_cmp(&phi[p]).unwrap().then(p.cmp(&q)));
        let active = &idx[..cfg.n_active];
        let z: f64 = active.iter().map(|&kk| phi[kk].exp()).sum();
        contributions.push(active.iter().map(|&kk| phi[kk].exp() / z * o[kk]).sum::<f64>());
    }
    let y = nae.params.intercept + contributions.iter().sum::<f64>();
    (contributions, y)
}

#[test]
fn matches_straight_line_evaluation() {
    for (seed, active) in [(1, 2), (2, 1), (3, 2)] {
        let cfg = ModelConfig::new(2, 3, 2).with_active(active).with_encoder(3, 5);
        let (nae, x, _) = small_instance(cfg, 20, seed, Task::Regression);
        let trace = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
        for t in 0..x.rows() {
            let (c, y) = reference(&nae, x.row(t));
            for j in 0..2 {
                assert!((trace.contributions.get(t, j) - c[j]).abs() <= 1e-12);
            }
            assert!((trace.predictions[t] - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn categorical_matches_straight_line() {
    let cfg = ModelConfig::new(2, 3, 3)
        .with_active(2)
        .with_inputs(vec![EncoderInput::Categorical(4), EncoderInput::Continuous]);
    let (nae, x, _) = small_instance(cfg, 20, 9, Task::Regression);
    let trace = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for t in 0..x.rows() {
        let (_, y) = reference(&nae, x.row(t));
        assert!((trace.predictions[t] - y).abs() <= 1e-12);
    }
}

#[test]
fn single_sample_forward_agrees_with_batch() {
    let (nae, x, _) = small_instance(ModelConfig::new(3, 4, 3).with_active(2), 5, 4, Task::Regression);
    let batch = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for t in 0..5 {
        let one = nae.forward(x.row(t), Mode::Eval, Dropout::default(), Noise::Off).unwrap();
        assert_eq!(one, batch.sample(t));
    }
}

#[test]
fn single_expert_is_plain_additive() {
    let cfg = ModelConfig::new(3, 4, 1);
    let (nae, x, _) = small_instance(cfg, 30, 5, Task::Regression);
    let trace = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for t in 0..x.rows() {
        let mut y = nae.params.intercept;
        for i in 0..3 {
            assert_eq!(trace.relevances.get(t, i), 1.0);
            let e = nae.encode_feature(i, &[x.get(t, i)]).unwrap();
            let o = nae.expert_outputs(i, &e).get(0, 0);
            assert_eq!(trace.contributions.get(t, i), o);
            y += o;
        }
        assert!((trace.predictions[t] - y).abs() <= 1e-12);
    }
}

#[test]
fn zero_gates_give_constant_relevances() {
    let (mut nae, x, _) = small_instance(ModelConfig::new(2, 3, 3), 10, 6, Task::Regression);
    if let Gating::Full(a) = &mut nae.params.gating {
        a.fill(0.0);
    }
    let trace = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for t in 1..x.rows() {
        assert_eq!(trace.relevances.row(t), trace.relevances.row(0));
    }
}

#[test]
fn even_variant_is_uniform_at_eval() {
    let cfg = ModelConfig::new(2, 3, 4).with_variant(Variant::Even).with_active(3);
    let (nae, x, _) = small_instance(cfg, 10, 7, Task::Regression);
    let trace = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for (r, &a) in trace.relevances.data().iter().zip(&trace.active) {
        assert_eq!(*r, if a { 1.0 / 3.0 } else { 0.0 });
    }
}

#[test]
fn diagonal_relevances_ignore_other_features() {
    let cfg = ModelConfig::new(3, 3, 3).with_variant(Variant::Diagonal).with_active(2);
    let (nae, x, _) = small_instance(cfg, 10, 8, Task::Regression);
    let base = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    let mut moved = x.clone();
    for t in 0..moved.rows() {
        moved.set(t, 1, x.get(t, 1) + 0.9);
        moved.set(t, 2, -x.get(t, 2));
    }
    let other = nae.forward_batch(&moved, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    for t in 0..x.rows() {
        assert_eq!(base.relevances.row(t)[..3], other.relevances.row(t)[..3]);
    }
}

#[test]
fn gumbel_only_in_diagonal_training() {
    let cfg = ModelConfig::new(2, 3, 3).with_variant(Variant::Diagonal);
    let (nae, x, _) = small_instance(cfg, 8, 10, Task::Regression);
    let mut rng = SeededRng::new(1);
    let train = nae.forward_batch(&x, Mode::Train, Dropout::default(), Noise::Sample(&mut rng)).unwrap();
    let eval = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap();
    assert!(train.draws.gumbel.is_some());
    assert!(eval.draws.gumbel.is_none());
    assert_ne!(train.relevances, eval.relevances);
    assert_eq!(train.gate_logits, eval.gate_logits);
}

#[test]
fn replay_reproduces_training_pass() {
    let cfg = ModelConfig::new(2, 3, 3).with_variant(Variant::Diagonal);
    let (nae, x, _) = small_instance(cfg, 8, 11, Task::Regression);
    let dropout = Dropout {
        encoder: 0.2,
        expert: 0.2,
    };
    let mut rng = SeededRng::new(5);
    let a = nae.forward_batch(&x, Mode::Train, dropout, Noise::Sample(&mut rng)).unwrap();
    let b = nae.forward_batch(&x, Mode::Train, dropout, Noise::Replay(&a.draws)).unwrap();
    assert_eq!(a.predictions, b.predictions);
}

#[test]
fn non_finite_input_names_stage() {
    let (nae, mut x, _) = small_instance(ModelConfig::new(2, 3, 2), 3, 12, Task::Regression);
    x.set(1, 0, f64::NAN);
    let err = nae.forward_batch(&x, Mode::Eval, Dropout::default(), Noise::Off).unwrap_err();
    assert!(err.to_string().contains("input"), "{err}");
    let (mut nae2, x2, _) = small_instance(ModelConfig::new(2, 3, 2), 3, 12, Task::Regression);
    nae2.params.experts[1].bias.set(0, 0, f64::INFINITY);
    let err = nae2.forward_batch(&x2, Mode::Eval, Dropout::default(), Noise::Off).unwrap_err();
    assert!(err.to_string().contains("experts"), "{err}");
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let cfg = ModelConfig::new(2, 3, 2).with_normalization(Normalization::BatchNorm);
    let (mut nae, x, _) = small_instance(cfg, 16, 13, Task::Regression);
    let eval_before = nae.predict(&x).unwrap();
    let mut rng = SeededRng::new(2);
    let trace = nae.forward_batch(&x, Mode::Train, Dropout::default(), Noise::Sample(&mut rng)).unwrap();
    assert_eq!(nae.predict(&x).unwrap(), eval_before);
    nae.update_norm_stats(&trace);
    assert_ne!(nae.predict(&x).unwrap(), eval_before);
    // Single-row evaluation is well defined with running statistics.
    let one = nae.predict(&Matrix::row_vector(x.row(0))).unwrap();
    assert_eq!(one[0], nae.predict(&x).unwrap()[0]);
}

fn arb_instance() -> impl Strategy<Value = (u64, usize, usize, usize, u8)> {
    (0u64..10_000, 1usize..4, 1usize..5, 1usize..5, 0u8..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_invariants((seed, n, k, c_seed, v) in arb_instance()) {
        let c = 1 + c_seed % k;
        let variant = [Variant::Standard, Variant::Diagonal, Variant::Even][v as usize];
        let cfg = ModelConfig::new(n, 3, k).with_active(c).with_variant(variant).with_encoder(2, 4);
        let (nae, x, _) = small_instance(cfg, 12, seed, Task::Regression);
        let mut rng = SeededRng::new(seed);
        for mode in [Mode::Eval, Mode::Train] {
            let trace = nae.forward_batch(&x, mode, Dropout::default(), Noise::Sample(&mut rng)).unwrap();
            for t in 0..x.rows() {
                let s = trace.sample(t);
                let mut total = nae.params.intercept;
                for j in 0..n {
                    let r = &s.relevances[j];
                    prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    for (rv, &a) in r.iter().zip(s.masks[j].active()) {
                        prop_assert!(*rv >= 0.0);
                        if !a { prop_assert_eq!(*rv, 0.0); }
                    }
                    prop_assert_eq!(s.masks[j].n_active(), c);
                    let direct: f64 = r.iter().zip(&s.expert_outputs[j]).map(|(a, b)| a * b).sum();
                    prop_assert!((s.contributions[j] - direct).abs() <= 1e-12);
                    let hi = s.expert_outputs[j].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lo = s.expert_outputs[j].iter().copied().fold(f64::INFINITY, f64::min);
                    prop_assert!(s.contributions[j] <= hi + 1e-12 && s.contributions[j] >= lo - 1e-12);
                    total += s.contributions[j];
                }
                prop_assert!((s.prediction - total).abs() <= 1e-12);
            }
        }
    }
}
