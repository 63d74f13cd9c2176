use super::construct::{scalar, Domain, ScalarFn, SeparableTerm, VALIDATION_POINTS};
use crate::error::{NaeError, Result};

/// Truncated separable expansion `f(x, z) ≈ Σ_m u_m(x)·v_m(z)`.
#[derive(Clone)]
pub struct SeparableExpansion {
    pub terms: Vec<(ScalarFn, ScalarFn)>,
    /// Largest `|f − Σ u_m v_m|` over the residual grid.
    pub residual: f64,
}

impl SeparableExpansion {
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        self.terms.iter().map(|(u, v)| u(x) * v(z)).sum()
    }

    /// Terms placed at feature i with partner j; each `C` is `1.5·sup|v|`
    /// (1 when `v` vanishes on the grid).
    pub fn into_terms(self, i: usize, j: usize, domain_j: Domain) -> Vec<SeparableTerm> {
        let grid = domain_j.grid(VALIDATION_POINTS);
        self.terms
            .into_iter()
            .map(|(u, v)| {
                let sup = grid.iter().map(|&z| v(z).abs()).fold(0.0, f64::max);
                let c = if sup > 0.0 { 1.5 * sup } else { 1.0 };
                SeparableTerm::new(i, j, u, v, c)
            })
            .collect()
    }
}

fn to_unit(d: Domain, x: f64) -> f64 {
    (2.0 * x - d.lo - d.hi) / (d.hi - d.lo)
}

/// `T_0..T_{n-1}` at `t`.
fn chebyshev_values(t: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let v = match k {
            0 => 1.0,
            1 => t,
            _ => 2.0 * t * out[k - 1] - out[k - 2],
        };
        out.push(v);
    }
    out
}

/// Tensor-product Chebyshev interpolant of degree `degree` in each variable,
/// regrouped as `Σ_a T_a(x)·v_a(z)`. The residual is measured on a
/// `residual_points²` grid.
pub fn chebyshev_separable(
    f: impl Fn(f64, f64) -> f64,
    di: Domain,
    dj: Domain,
    degree: usize,
    residual_points: usize,
) -> Result<SeparableExpansion> {
    if !(di.hi > di.lo && dj.hi > dj.lo) {
        return Err(NaeError::config("expansion domains must be nonempty"));
    }
    let n = degree + 1;
    let nodes: Vec<f64> = (0..n)
        .map(|p| (std::f64::consts::PI * (p as f64 + 0.5) / n as f64).cos())
        .collect();
    let from_unit = |d: Domain, t: f64| 0.5 * (d.lo + d.hi) + 0.5 * (d.hi - d.lo) * t;
    let tx: Vec<Vec<f64>> = nodes.iter().map(|&t| chebyshev_values(t, n)).collect();
    let mut coef = vec![vec![0.0; n]; n];
    for (p, &xp) in nodes.iter().enumerate() {
        for (q, &zq) in nodes.iter().enumerate() {
            let fv = f(from_unit(di, xp), from_unit(dj, zq));
            for a in 0..n {
                for b in 0..n {
                    coef[a][b] += fv * tx[p][a] * tx[q][b];
                }
            }
        }
    }
    for (a, row) in coef.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            let wa = if a == 0 { 1.0 } else { 2.0 };
            let wb = if b == 0 { 1.0 } else { 2.0 };
            *c *= wa * wb / (n * n) as f64;
        }
    }

    let mut terms: Vec<(ScalarFn, ScalarFn)> = Vec::new();
    for (a, row) in coef.into_iter().enumerate() {
        if row.iter().all(|c| c.abs() < 1e-15) {
            continue;
        }
        let u = scalar(move |x| chebyshev_values(to_unit(di, x), a + 1)[a]);
        let v = scalar(move |z| {
            let t = chebyshev_values(to_unit(dj, z), row.len());
            row.iter().zip(&t).map(|(c, tv)| c * tv).sum()
        });
        terms.push((u, v));
    }
    let mut expansion = SeparableExpansion { terms, residual: 0.0 };
    let gi = di.grid(residual_points);
    let gj = dj.grid(residual_points);
    for &x in &gi {
        for &z in &gj {
            expansion.residual = expansion.residual.max((f(x, z) - expansion.eval(x, z)).abs());
        }
    }
    Ok(expansion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_recurrence() {
        let t = chebyshev_values(0.3, 5);
        let theta = 0.3f64.acos();
        for (k, v) in t.iter().enumerate() {
            assert!((v - (k as f64 * theta).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_for_low_degree_polynomials() {
        let d = Domain::new(-1.0, 2.0);
        let e = chebyshev_separable(|x, z| 1.0 + x * z - 0.5 * x * x * z, d, d, 3, 31).unwrap();
        assert!(e.residual < 1e-12, "{}", e.residual);
    }

    #[test]
    fn smooth_residual_decays_with_degree() {
        let d = Domain::new(-1.0, 1.0);
        let f = |x: f64, z: f64| (x + z).sin();
        let low = chebyshev_separable(f, d, d, 4, 51).unwrap().residual;
        let high = chebyshev_separable(f, d, d, 12, 51).unwrap().residual;
        assert!(high < 1e-9 && high < low * 1e-3, "{low} {high}");
    }
}
