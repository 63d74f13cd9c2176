//! Reverse-mode gradients of the training objective for the fixed architecture.

use super::loss::{task_loss_grad, LossWeights};
use crate::error::{NaeError, Result};
use crate::model::{category_code, BatchTrace, Encoder, EncoderCache, EncoderInput, Gating, Mode, Nae, NaeParams, Normalization};
use crate::numerics::{gemm, matmul_nt, matmul_tn, Matrix};

/// One gradient tensor per parameter tensor, laid out exactly like [`NaeParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: NaeParams,
}

impl GradientSet {
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        self.grads.tensors()
    }

    /// Errors with the name of the first tensor holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(NaeError::numerical(format!("gradient of {name}")));
            }
        }
        Ok(())
    }
}

fn add_colsums(dst: &mut Matrix, src: &Matrix) {
    for t in 0..src.rows() {
        for (d, s) in dst.data_mut().iter_mut().zip(src.row(t)) {
            *d += s;
        }
    }
}

/// Gradients of `mean task loss + λ·variation + ρ·output` for the batch in `trace`.
///
/// `trace` must come from a forward pass of `nae` on these inputs; its recorded
/// dropout masks and Gumbel draws are treated as constants, as is the top-C mask.
pub fn backward(nae: &Nae, trace: &BatchTrace, targets: &[f64], w: &LossWeights) -> Result<GradientSet> {
    let cfg = &nae.config;
    let params = &nae.params;
    let (n, d, k) = (cfg.n_features, cfg.latent_dim, cfg.n_experts);
    let b = trace.batch_size();
    if targets.len() != b {
        return Err(NaeError::usage(format!("{} targets for a batch of {b}", targets.len())));
    }
    let mut g = params.zeros_like();

    let dy: Vec<f64> = targets
        .iter()
        .zip(&trace.predictions)
        .map(|(y, p)| task_loss_grad(w.task, *y, *p) / b as f64)
        .collect();
    g.intercept = dy.iter().sum();

    let out_scale = 2.0 * w.output_penalty / (n * b) as f64;
    let var_scale = 2.0 * w.lambda_var / (n * b * k) as f64;
    let inv_t = 1.0 / trace.temperature;

    let mut d_phi = Matrix::zeros(b, n * k);
    let mut d_expert = Vec::with_capacity(n);
    for j in 0..n {
        let dropped = &trace.dropped_outputs[j];
        let outputs = &trace.expert_outputs[j];
        let mask = trace.draws.expert_dropout.get(j).and_then(Option::as_ref);
        let mut d_o = Matrix::zeros(b, k);
        let mut dr = vec![0.0; k];
        for t in 0..b {
            let do_t = dy[t] + out_scale * trace.contributions.get(t, j);
            let r = &trace.relevances.row(t)[j * k..(j + 1) * k];
            let act = &trace.active[t * n * k + j * k..t * n * k + (j + 1) * k];
            let o_row = outputs.row(t);
            let mean = o_row.iter().sum::<f64>() / k as f64;
            let d_row = d_o.row_mut(t);
            for kk in 0..k {
                let scale = mask.map_or(1.0, |m| m.get(t, kk));
                d_row[kk] = do_t * r[kk] * scale + var_scale * (o_row[kk] - mean);
                dr[kk] = do_t * dropped.get(t, kk);
            }
            let dot: f64 = r.iter().zip(&dr).map(|(a, b)| a * b).sum();
            let phi_row = &mut d_phi.row_mut(t)[j * k..(j + 1) * k];
            for kk in 0..k {
                phi_row[kk] = if act[kk] { inv_t * r[kk] * (dr[kk] - dot) } else { 0.0 };
            }
        }
        d_expert.push(d_o);
    }

    add_colsums(&mut g.gate_bias, &d_phi);

    let mut d_enc: Vec<Matrix> = (0..n).map(|_| Matrix::zeros(b, d)).collect();
    match (&params.gating, &mut g.gating) {
        (Gating::Full(gw), Gating::Full(dgw)) => {
            let mut z = Matrix::zeros(b, n * d);
            for (i, e) in trace.encodings.iter().enumerate() {
                for t in 0..b {
                    z.row_mut(t)[i * d..(i + 1) * d].copy_from_slice(e.row(t));
                }
            }
            gemm(1.0, &z, true, &d_phi, false, 0.0, dgw);
            let dz = matmul_nt(&d_phi, gw);
            for (i, de) in d_enc.iter_mut().enumerate() {
                for t in 0..b {
                    de.row_mut(t).copy_from_slice(&dz.row(t)[i * d..(i + 1) * d]);
                }
            }
        }
        (Gating::Diagonal(blocks), Gating::Diagonal(dblocks)) => {
            for j in 0..n {
                let dphi_j = d_phi.column_block(j * k, k);
                gemm(1.0, &trace.encodings[j], true, &dphi_j, false, 0.0, &mut dblocks[j]);
                gemm(1.0, &dphi_j, false, &blocks[j], true, 1.0, &mut d_enc[j]);
            }
        }
        _ => unreachable!("gradient layout mirrors parameters"),
    }

    for i in 0..n {
        let heads = &params.experts[i];
        let dheads = &mut g.experts[i];
        gemm(1.0, &trace.encodings[i], true, &d_expert[i], false, 0.0, &mut dheads.weight);
        add_colsums(&mut dheads.bias, &d_expert[i]);
        gemm(1.0, &d_expert[i], false, &heads.weight, true, 1.0, &mut d_enc[i]);
    }

    for i in 0..n {
        let column = trace.inputs.column(i);
        match (&params.encoders[i], &mut g.encoders[i], &trace.caches[i]) {
            (Encoder::Mlp { input, layers }, Encoder::Mlp { layers: dlayers, .. }, EncoderCache::Mlp(cache)) => {
                let batch_norm = cfg.normalization == Normalization::BatchNorm;
                let batch_stats = batch_norm && trace.mode == Mode::Train;
                let mut d_act = std::mem::replace(&mut d_enc[i], Matrix::zeros(0, 0));
                for l in (0..layers.len()).rev() {
                    let layer = &layers[l];
                    let act = &cache.activations[l];
                    let xhat = &cache.xhat[l];
                    let inv = &cache.inv_std[l];
                    let width = act.cols();
                    let gain = layer.norm.gain.data();
                    for (dv, a) in d_act.data_mut().iter_mut().zip(act.data()) {
                        if *a <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    let dl = &mut dlayers[l];
                    for t in 0..b {
                        let dn = d_act.row(t);
                        let xh = xhat.row(t);
                        for c in 0..width {
                            dl.norm.gain.data_mut()[c] += dn[c] * xh[c];
                            dl.norm.shift.data_mut()[c] += dn[c];
                        }
                    }
                    let mut dxhat = d_act;
                    for t in 0..b {
                        for (v, gm) in dxhat.row_mut(t).iter_mut().zip(gain) {
                            *v *= gm;
                        }
                    }
                    let mut dz = Matrix::zeros(b, width);
                    if !batch_norm {
                        for t in 0..b {
                            let dx = dxhat.row(t);
                            let xh = xhat.row(t);
                            let m1 = dx.iter().sum::<f64>() / width as f64;
                            let m2 = dx.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                            for (c, o) in dz.row_mut(t).iter_mut().enumerate() {
                                *o = inv[t] * (dx[c] - m1 - xh[c] * m2);
                            }
                        }
                    } else if batch_stats {
                        let mut m1 = vec![0.0; width];
                        let mut m2 = vec![0.0; width];
                        for t in 0..b {
                            for c in 0..width {
                                m1[c] += dxhat.get(t, c);
                                m2[c] += dxhat.get(t, c) * xhat.get(t, c);
                            }
                        }
                        for t in 0..b {
                            for c in 0..width {
                                let v = dxhat.get(t, c) - m1[c] / b as f64 - xhat.get(t, c) * m2[c] / b as f64;
                                dz.set(t, c, inv[c] * v);
                            }
                        }
                    } else {
                        for t in 0..b {
                            for c in 0..width {
                                dz.set(t, c, inv[c] * dxhat.get(t, c));
                            }
                        }
                    }
                    add_colsums(&mut dl.linear.bias, &dz);
                    if l == 0 {
                        match input {
                            EncoderInput::Continuous => {
                                let dw = dl.linear.weight.data_mut();
                                for (t, x) in column.iter().enumerate() {
                                    for (o, v) in dw.iter_mut().zip(dz.row(t)) {
                                        *o += x * v;
                                    }
                                }
                            }
                            EncoderInput::Categorical(card) => {
                                for (t, &x) in column.iter().enumerate() {
                                    let code = category_code(x, *card)?;
                                    for (o, v) in dl.linear.weight.row_mut(code).iter_mut().zip(dz.row(t)) {
                                        *o += v;
                                    }
                                }
                            }
                        }
                        d_act = Matrix::zeros(0, 0);
                    } else {
                        let x_in = &cache.inputs[l - 1];
                        dl.linear.weight = matmul_tn(x_in, &dz);
                        let mut dx = matmul_nt(&dz, &layer.linear.weight);
                        if let Some(Some(mask)) = trace.draws.encoder_dropout.get(i).and_then(|f| f.get(l - 1)) {
                            for (v, s) in dx.data_mut().iter_mut().zip(mask.data()) {
                                *v *= s;
                            }
                        }
                        d_act = dx;
                    }
                }
            }
            (Encoder::Lookup(table), Encoder::Lookup(dtable), EncoderCache::Lookup) => {
                for (t, &x) in column.iter().enumerate() {
                    let (kk, wt) = table.locate(x);
                    let de = d_enc[i].row(t);
                    for (o, v) in dtable.table.row_mut(kk).iter_mut().zip(de) {
                        *o += (1.0 - wt) * v;
                    }
                    if wt != 0.0 {
                        for (o, v) in dtable.table.row_mut(kk + 1).iter_mut().zip(de) {
                            *o += wt * v;
                        }
                    }
                }
            }
            _ => unreachable!("gradient layout mirrors parameters"),
        }
    }

    let grads = GradientSet { grads: g };
    grads.check_finite()?;
    Ok(grads)
}
