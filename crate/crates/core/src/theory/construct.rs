use std::sync::Arc;

use crate::error::{NaeError, Result};
use crate::model::{Encoder, ExpertHeads, Gating, LookupTable, ModelConfig, Nae, NaeParams, NormStats};
use crate::numerics::{softmax_masked, Matrix, MaskVector};

/// Closed-form or tabulated function of one variable.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// Piecewise-linear interpolant through `values` at equally spaced points of `[lo, hi]`.
pub fn tabulated(lo: f64, hi: f64, values: Vec<f64>) -> Result<ScalarFn> {
    let table = LookupTable::new(lo, hi, Matrix::new(values.len(), 1, values)?)?;
    Ok(Arc::new(move |x| {
        let mut out = [0.0];
        table.eval_into(x, &mut out);
        out[0]
    }))
}

/// Largest |β| used for a product gate.
pub const BETA_CLAMP: f64 = 18.0;

/// Points used to check `c_const > sup |v|`.
pub const VALIDATION_POINTS: usize = 1001;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Self {
        Domain { lo, hi }
    }

    /// `points` equally spaced values including both ends.
    pub fn grid(&self, points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![self.lo];
        }
        (0..points)
            .map(|p| {
                if p + 1 == points {
                    self.hi
                } else {
                    self.lo + (self.hi - self.lo) * p as f64 / (points - 1) as f64
                }
            })
            .collect()
    }
}

/// `u(x_i)·v(x_j)`, realized inside feature i's contribution.
#[derive(Clone)]
pub struct SeparableTerm {
    pub i: usize,
    pub j: usize,
    pub u: ScalarFn,
    pub v: ScalarFn,
    pub c_const: f64,
}

impl SeparableTerm {
    pub fn new(i: usize, j: usize, u: ScalarFn, v: ScalarFn, c_const: f64) -> Self {
        SeparableTerm { i, j, u, v, c_const }
    }

    /// Checks `i ≠ j` and `c_const > max |v|` over [`VALIDATION_POINTS`] points of `domain_j`.
    pub fn validate(&self, domain_j: Domain) -> Result<()> {
        if self.i == self.j {
            return Err(NaeError::usage(format!("separable term pairs feature {} with itself", self.i)));
        }
        let sup = domain_j
            .grid(VALIDATION_POINTS)
            .into_iter()
            .map(|z| (self.v)(z).abs())
            .fold(0.0, f64::max);
        if !(self.c_const.is_finite() && self.c_const > sup) {
            return Err(NaeError::Construction(format!(
                "term ({}, {}): C = {} must exceed sup |v| = {sup}",
                self.i, self.j, self.c_const
            )));
        }
        Ok(())
    }
}

/// Intercept, univariate terms and separable pairwise terms.
#[derive(Clone, Default)]
pub struct Ga2mSpec {
    pub intercept: f64,
    pub univariate: Vec<(usize, ScalarFn)>,
    pub pairwise: Vec<SeparableTerm>,
}

impl Ga2mSpec {
    /// Closed-form value at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (i, f) in &self.univariate {
            y += f(x[*i]);
        }
        for t in &self.pairwise {
            y += (t.u)(x[t.i]) * (t.v)(x[t.j]);
        }
        y
    }

    /// Experts needed at feature i: `1 + 2·#terms placed at i`.
    pub fn budget(&self, i: usize) -> usize {
        1 + 2 * self.pairwise.iter().filter(|t| t.i == i).count()
    }
}

/// Settings shared by the builders: one domain per feature, the number of
/// experts per feature and the lookup-table resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildConfig {
    pub domains: Vec<Domain>,
    pub n_experts: usize,
    pub knots: usize,
    /// Added to every product gate's β; nonzero values break the construction on purpose.
    pub perturb_beta: f64,
}

impl BuildConfig {
    pub fn new(domains: Vec<Domain>, n_experts: usize, knots: usize) -> Self {
        BuildConfig {
            domains,
            n_experts,
            knots,
            perturb_beta: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(NaeError::config("at least one feature domain is required"));
        }
        if self.knots < 2 {
            return Err(NaeError::config("lookup tables need at least 2 knots"));
        }
        if self.n_experts == 0 {
            return Err(NaeError::config("n_experts must be at least 1"));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if !(d.lo.is_finite() && d.hi.is_finite() && d.hi > d.lo) {
                return Err(NaeError::config(format!("domain of feature {i} is empty")));
            }
        }
        Ok(())
    }
}

/// `(β, clamped)` with `β = −arctanh(v/C)` limited to `|β| ≤ BETA_CLAMP`.
pub fn product_beta(v: f64, c: f64) -> (f64, bool) {
    let b = -(v / c).atanh();
    if b.abs() > BETA_CLAMP || b.is_nan() {
        (BETA_CLAMP.copysign(-v), true)
    } else {
        (b, false)
    }
}

/// `−ln(2 cosh β)`, the shift that keeps a product pair's total gate weight fixed.
pub fn pair_shift(beta: f64) -> f64 {
    let a = beta.abs();
    -a - (-2.0 * a).exp().ln_1p()
}

/// `r₊ − r₋` of the two-entry softmax over logits `(α − β, α + β)`.
pub fn gate_difference(alpha: f64, beta: f64) -> f64 {
    let r = softmax_masked(&[alpha - beta, alpha + beta], &MaskVector::all_active(2)).expect("two active entries");
    r[0] - r[1]
}

/// Lookup-encoder GAM: `ŷ = ω₀ + Σ f_i(x_i)` with one expert per feature.
///
/// `f_list[i] = None` means `f_i ≡ 0`.
pub fn build_gam(f_list: &[Option<ScalarFn>], intercept: f64, config: &BuildConfig) -> Result<Nae> {
    if config.n_experts != 1 {
        return Err(NaeError::usage(format!(
            "GAM construction needs K = 1, got K = {}",
            config.n_experts
        )));
    }
    if f_list.len() != config.domains.len() {
        return Err(NaeError::config(format!(
            "{} univariate functions for {} domains",
            f_list.len(),
            config.domains.len()
        )));
    }
    let spec = Ga2mSpec {
        intercept,
        univariate: f_list
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.clone().map(|f| (i, f)))
            .collect(),
        pairwise: Vec::new(),
    };
    build_ga2m(&spec, config)
}

/// Two experts realizing `u(x_i)·v(x_j)` as feature i's contribution; every other
/// feature contributes zero.
pub fn build_product(term: &SeparableTerm, config: &BuildConfig) -> Result<Nae> {
    let spec = Ga2mSpec {
        intercept: 0.0,
        univariate: Vec::new(),
        pairwise: vec![term.clone()],
    };
    let mut cfg = config.clone();
    cfg.n_experts = 2;
    realize(&spec, &cfg, false)
}

/// Latent slot layout of one feature's lookup encoder.
#[derive(Default)]
struct Slots {
    /// Pairwise terms whose `u` lives here: (term index, slot).
    u: Vec<(usize, usize)>,
    /// Pairwise terms whose `v` lives here: (term index, β slot, shift slot).
    v: Vec<(usize, usize, usize)>,
    width: usize,
}

/// Lookup-encoder NAE realizing `spec`, with at least `1 + 2·M_i` experts at
/// every feature i carrying `M_i` pairwise terms.
///
/// Feature i's experts are a pair `f_i ± (C/w)·u_m` per term placed at i, where
/// `w` is the pair's fixed total gate weight, followed by experts carrying `f_i`
/// alone. The pair's gate logits `shift(x_j) ∓ β(x_j)` come from feature j's
/// encoder only.
pub fn build_ga2m(spec: &Ga2mSpec, config: &BuildConfig) -> Result<Nae> {
    realize(spec, config, true)
}

fn realize(spec: &Ga2mSpec, config: &BuildConfig, full_budget: bool) -> Result<Nae> {
    config.validate()?;
    let n = config.domains.len();
    let k = config.n_experts;
    for (i, _) in &spec.univariate {
        if *i >= n {
            return Err(NaeError::config(format!("univariate term on feature {i}, but n = {n}")));
        }
    }
    for t in &spec.pairwise {
        if t.i >= n || t.j >= n {
            return Err(NaeError::config(format!("pairwise term ({}, {}) out of range for n = {n}", t.i, t.j)));
        }
        t.validate(config.domains[t.j])?;
    }
    for i in 0..n {
        let need = if full_budget { spec.budget(i) } else { (spec.budget(i) - 1).max(1) };
        if k < need {
            return Err(NaeError::config(format!(
                "feature {i} needs K >= 1 + 2·(pairwise terms at i) = {need} experts, got K = {k}"
            )));
        }
    }

    let mut slots: Vec<Slots> = (0..n).map(|_| Slots { width: 1, ..Slots::default() }).collect();
    for (m, t) in spec.pairwise.iter().enumerate() {
        let s = &mut slots[t.i];
        s.u.push((m, s.width));
        s.width += 1;
        let s = &mut slots[t.j];
        s.v.push((m, s.width, s.width + 1));
        s.width += 2;
    }
    let d = slots.iter().map(|s| s.width).max().unwrap_or(1);

    let perturb = config.perturb_beta;
    let mut encoders = Vec::with_capacity(n);
    for (i, s) in slots.iter().enumerate() {
        let dom = config.domains[i];
        let table = LookupTable::tabulate(dom.lo, dom.hi, config.knots, d, |x| {
            let mut row = vec![0.0; d];
            row[0] = spec.univariate.iter().filter(|(f, _)| *f == i).map(|(_, f)| f(x)).sum();
            for &(m, slot) in &s.u {
                row[slot] = (spec.pairwise[m].u)(x);
            }
            for &(m, b_slot, s_slot) in &s.v {
                let t = &spec.pairwise[m];
                let (beta, _) = product_beta((t.v)(x), t.c_const);
                let beta = beta + perturb;
                row[b_slot] = beta;
                row[s_slot] = pair_shift(beta);
            }
            row
        })?;
        encoders.push(Encoder::Lookup(table));
    }

    let mut experts = Vec::with_capacity(n);
    let mut gate = Matrix::zeros(n * d, n * k);
    for (i, s) in slots.iter().enumerate() {
        let mut weight = Matrix::zeros(d, k);
        for c in 0..k {
            weight.set(0, c, 1.0);
        }
        let units = (k - s.u.len()) as f64;
        for (p, &(m, slot)) in s.u.iter().enumerate() {
            let t = &spec.pairwise[m];
            let (plus, minus) = (2 * p, 2 * p + 1);
            weight.set(slot, plus, t.c_const * units);
            weight.set(slot, minus, -t.c_const * units);
            let j = t.j;
            let (_, b_slot, s_slot) = *slots[j].v.iter().find(|(mm, _, _)| *mm == m).expect("v slot");
            let (row_b, row_s) = (j * d + b_slot, j * d + s_slot);
            let (col_p, col_m) = (i * k + plus, i * k + minus);
            gate.set(row_b, col_p, -1.0);
            gate.set(row_s, col_p, 1.0);
            gate.set(row_b, col_m, 1.0);
            gate.set(row_s, col_m, 1.0);
        }
        experts.push(ExpertHeads {
            weight,
            bias: Matrix::zeros(1, k),
        });
    }

    let model_cfg = ModelConfig::new(n, d, k).with_encoder(1, d);
    let params = NaeParams {
        encoders,
        experts,
        gating: Gating::Full(gate),
        gate_bias: Matrix::zeros(1, n * k),
        intercept: spec.intercept,
    };
    let norm_stats = NormStats::fresh(&model_cfg);
    Nae::from_parts(model_cfg, params, norm_stats)
}

/// Copy of `nae` with every feature's K heads replaced by their mean head, so all
/// experts of a feature agree exactly.
pub fn tie_experts(nae: &Nae) -> Nae {
    let mut out = nae.clone();
    for h in &mut out.params.experts {
        let (d, k) = (h.weight.rows(), h.weight.cols());
        for r in 0..d {
            let row = h.weight.row_mut(r);
            let m = row.iter().sum::<f64>() / k as f64;
            row.fill(m);
        }
        let b = h.bias.data_mut();
        let m = b.iter().sum::<f64>() / k as f64;
        b.fill(m);
    }
    out
}

/// Inputs of every point of the `points × points` grid over features `i` and `j`,
/// other features held at their domain midpoint. Row `a·points + b` holds
/// `(grid_i[a], grid_j[b])`.
pub fn pair_grid(domains: &[Domain], i: usize, j: usize, points: usize) -> (Matrix, Vec<f64>, Vec<f64>) {
    let gi = domains[i].grid(points);
    let gj = domains[j].grid(points);
    let n = domains.len();
    let mut x = Matrix::zeros(points * points, n);
    for a in 0..points {
        for b in 0..points {
            let row = x.row_mut(a * points + b);
            for (f, d) in domains.iter().enumerate() {
                row[f] = 0.5 * (d.lo + d.hi);
            }
            row[i] = gi[a];
            row[j] = gj[b];
        }
    }
    (x, gi, gj)
}

/// Largest `|ŷ(x) − target(x)|` over the rows of `x`.
pub fn sup_error(nae: &Nae, x: &Matrix, target: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let pred = nae.predict(x)?;
    Ok(pred
        .iter()
        .enumerate()
        .map(|(r, p)| (p - target(x.row(r))).abs())
        .fold(0.0, f64::max))
}
