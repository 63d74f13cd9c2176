//! Dense matrices, masked softmax, top-C selection and seeded sampling.

mod matrix;
mod rng;
mod softmax;

pub use matrix::Matrix;
pub(crate) use matrix::{gemm, matmul_nn, matmul_nt, matmul_tn};
pub use rng::{gumbel_from_uniform, sample_gumbel, SeededRng};
pub use softmax::{softmax_masked, top_c_mask, MaskVector, NEG_INF};
pub(crate) use softmax::{softmax_masked_into, top_c_into};

/// Mean computed as `v₀ + Σ(vᵢ − v₀)/n`, which returns `v₀` bit-exactly when all
/// values are equal.
pub fn pivot_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut iter = values.into_iter();
    let Some(first) = iter.next() else {
        return f64::NAN;
    };
    let mut n = 1usize;
    let mut acc = 0.0;
    for v in iter {
        acc += v - first;
        n += 1;
    }
    first + acc / n as f64
}

/// Population variance around [`pivot_mean`].
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = pivot_mean(values.iter().copied());
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}
