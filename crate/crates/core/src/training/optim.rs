use std::f64::consts::PI;

use crate::model::NaeParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, same layout as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: NaeParams,
    pub v: NaeParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NaeParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update: bias-corrected moments and weight decay decoupled from the
/// gradient (`θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`).
pub fn adamw_step(params: &mut NaeParams, grads: &NaeParams, state: &mut AdamState, lr: f64, weight_decay: f64) {
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let p = params.tensors_mut();
    let g = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((( _, p), (_, g)), (_, m)), (_, v)) in p.into_iter().zip(g).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * weight_decay * p[i];
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    (lr0 * 0.5 * (1.0 + (PI * frac).cos())).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::SeededRng;

    fn scalar(v: f64) -> NaeParams {
        let cfg = ModelConfig::new(1, 1, 1).with_encoder(1, 1);
        let mut p = init_params(&cfg, &mut SeededRng::new(0)).unwrap().zeros_like();
        p.intercept = v;
        p
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let cfg = ModelConfig::new(2, 3, 2);
        let mut p = init_params(&cfg, &mut SeededRng::new(1)).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut g = p.zeros_like();
        g.intercept = 1.0;
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.0);
        // m̂ = v̂ = 1
        assert!((p.intercept + 0.1 / (1.0 + ADAM_EPS)).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay() {
        let mut p = scalar(3.0);
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.01);
        assert!((p.intercept - 3.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0, 100, 0.5), 0.5);
        assert!(cosine_lr(100, 100, 0.5).abs() < 1e-16);
        assert!((cosine_lr(50, 100, 0.5) - 0.25).abs() < 1e-15);
        assert!(cosine_lr(30, 100, 1.0) > cosine_lr(31, 100, 1.0));
    }
}
