use crate::error::{NaeError, Result};

/// Sentinel value of an inactive mask entry.
///
/// It is never used in arithmetic: masked entries are skipped explicitly, so
/// `(−∞) − (−∞)` cannot arise.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Additive expert mask: `0` for active experts, [`NEG_INF`] for the rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVector {
    active: Vec<bool>,
}

impl MaskVector {
    pub fn all_active(k: usize) -> Self {
        MaskVector {
            active: vec![true; k],
        }
    }

    pub fn from_active(active: Vec<bool>) -> Self {
        MaskVector { active }
    }

    /// Parses additive entries; each must be exactly `0` or [`NEG_INF`].
    pub fn from_entries(entries: &[f64]) -> Result<Self> {
        let active = entries
            .iter()
            .map(|&e| {
                if e == 0.0 {
                    Ok(true)
                } else if e == NEG_INF {
                    Ok(false)
                } else {
                    Err(NaeError::config(format!("mask entry {e} is neither 0 nor NEG_INF")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(MaskVector { active })
    }

    pub fn entries(&self) -> Vec<f64> {
        self.active
            .iter()
            .map(|&a| if a { 0.0 } else { NEG_INF })
            .collect()
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Softmax of `logits + mask`; masked entries come out as exactly `0`.
pub fn softmax_masked(logits: &[f64], mask: &MaskVector) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(NaeError::config(format!(
            "softmax: {} logits but mask of length {}",
            logits.len(),
            mask.len()
        )));
    }
    if mask.n_active() == 0 {
        return Err(NaeError::config("softmax: every entry is masked"));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_masked_into(logits, mask.active(), 1.0, &mut out);
    Ok(out)
}

/// `out = softmax(logits / temperature)` over the active entries, zero elsewhere.
///
/// Caller guarantees at least one active entry and matching lengths.
pub(crate) fn softmax_masked_into(logits: &[f64], active: &[bool], temperature: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (&l, &a) in logits.iter().zip(active) {
        if a && l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for ((o, &l), &a) in out.iter_mut().zip(logits).zip(active) {
        if a {
            let e = ((l - max) / temperature).exp();
            *o = e;
            sum += e;
        } else {
            *o = 0.0;
        }
    }
    for (o, &a) in out.iter_mut().zip(active) {
        if a {
            *o /= sum;
        }
    }
}

/// Mask keeping the `c` largest logits; ties go to the lower index.
pub fn top_c_mask(logits: &[f64], c: usize) -> Result<MaskVector> {
    if c == 0 || c > logits.len() {
        return Err(NaeError::config(format!(
            "top-c mask needs 1 <= c <= {}, got {c}",
            logits.len()
        )));
    }
    let mut active = vec![false; logits.len()];
    top_c_into(logits, c, &mut active);
    Ok(MaskVector { active })
}

pub(crate) fn top_c_into(logits: &[f64], c: usize, active: &mut [bool]) {
    let k = logits.len();
    if c >= k {
        active.iter_mut().for_each(|a| *a = true);
        return;
    }
    let mut order: Vec<usize> = (0..k).collect();
    // Stable sort keeps lower indices first among equal logits.
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    active.iter_mut().for_each(|a| *a = false);
    for &idx in &order[..c] {
        active[idx] = true;
    }
}
