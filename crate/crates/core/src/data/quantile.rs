use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Dataset, FeatureKind, Split};
use crate::error::{NaeError, Result};

/// Piecewise-linear map from raw values to normal scores, fitted on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileColumn {
    /// Distinct reference values, ascending.
    pub values: Vec<f64>,
    /// Normal score of each distinct value.
    pub scores: Vec<f64>,
}

impl QuantileColumn {
    /// Mid-rank empirical CDF `(rank + ½)/N` (ties share their average rank),
    /// mapped through the standard normal quantile function.
    pub fn fit(reference: &[f64]) -> Result<Self> {
        if reference.is_empty() {
            return Err(NaeError::data("quantile transform needs a nonempty reference split"));
        }
        let mut sorted = reference.to_vec();
        sorted.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let n = sorted.len() as f64;
        let mut values = Vec::new();
        let mut scores = Vec::new();
        let mut start = 0;
        while start < sorted.len() {
            let mut end = start;
            while end + 1 < sorted.len() && sorted[end + 1] == sorted[start] {
                end += 1;
            }
            let rank = (start + end) as f64 / 2.0;
            values.push(sorted[start]);
            scores.push(normal.inverse_cdf((rank + 0.5) / n));
            start = end + 1;
        }
        if values.len() == 1 {
            scores[0] = 0.0;
        }
        Ok(QuantileColumn { values, scores })
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    /// Linear interpolation between reference values, clamped outside their range.
    pub fn apply(&self, x: f64) -> f64 {
        let v = &self.values;
        let last = v.len() - 1;
        if self.is_constant() {
            return 0.0;
        }
        if x <= v[0] {
            return self.scores[0];
        }
        if x >= v[last] {
            return self.scores[last];
        }
        let hi = v.partition_point(|&p| p <= x);
        let lo = hi - 1;
        if v[lo] == x {
            return self.scores[lo];
        }
        let w = (x - v[lo]) / (v[hi] - v[lo]);
        self.scores[lo] + w * (self.scores[hi] - self.scores[lo])
    }

    /// Inverse of [`QuantileColumn::apply`] on the fitted score range.
    pub fn invert(&self, score: f64) -> f64 {
        let s = &self.scores;
        let last = s.len() - 1;
        if self.is_constant() || score <= s[0] {
            return self.values[0];
        }
        if score >= s[last] {
            return self.values[last];
        }
        let hi = s.partition_point(|&p| p <= score);
        let lo = hi - 1;
        if s[lo] == score {
            return self.values[lo];
        }
        let w = (score - s[lo]) / (s[hi] - s[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }
}

/// Per-feature quantile maps; categorical columns pass through untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTransform {
    pub columns: Vec<Option<QuantileColumn>>,
}

impl QuantileTransform {
    /// Fits on the rows of `reference`.
    pub fn fit(dataset: &Dataset, reference: Split) -> Result<Self> {
        let rows = dataset.indices(reference);
        if rows.is_empty() {
            return Err(NaeError::data(format!("{} split is empty", reference.as_str())));
        }
        let mut columns = Vec::with_capacity(dataset.n_features());
        for (c, kind) in dataset.kinds.iter().enumerate() {
            match kind {
                FeatureKind::Categorical { .. } => columns.push(None),
                FeatureKind::Continuous => {
                    let col: Vec<f64> = rows.iter().map(|&r| dataset.features.get(r, c)).collect();
                    let q = QuantileColumn::fit(&col)?;
                    if q.is_constant() {
                        log::warn!("feature '{}' has zero variance; mapped to zeros", dataset.names[c]);
                    }
                    columns.push(Some(q));
                }
            }
        }
        Ok(QuantileTransform { columns })
    }

    pub fn transform_value(&self, col: usize, x: f64) -> f64 {
        match &self.columns[col] {
            Some(q) => q.apply(x),
            None => x,
        }
    }

    /// Raw value of a transformed one; categorical columns pass through.
    pub fn invert_value(&self, col: usize, z: f64) -> f64 {
        match &self.columns[col] {
            Some(q) => q.invert(z),
            None => z,
        }
    }

    pub fn transform_row(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = self.transform_value(c, *v);
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        if self.columns.len() != dataset.n_features() {
            return Err(NaeError::data(format!(
                "transform has {} columns, dataset {}",
                self.columns.len(),
                dataset.n_features()
            )));
        }
        let mut out = dataset.clone();
        for r in 0..out.n_rows() {
            self.transform_row(out.features.row_mut(r));
        }
        Ok(out)
    }
}

/// Fits the transform on the train split and applies it to every row.
pub fn quantile_transform(dataset: &Dataset) -> Result<(Dataset, QuantileTransform)> {
    let t = QuantileTransform::fit(dataset, Split::Train)?;
    Ok((t.apply(dataset)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::numerics::{population_variance, Matrix, SeededRng};

    #[test]
    fn symmetric_and_monotone() {
        let q = QuantileColumn::fit(&[3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
        let z: Vec<f64> = (1..=5).map(|v| q.apply(v as f64)).collect();
        assert!(z.windows(2).all(|w| w[0] < w[1]));
        for k in 0..5 {
            assert!((z[k] + z[4 - k]).abs() < 1e-12);
        }
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn clamps_outside_range() {
        let q = QuantileColumn::fit(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(q.apply(-10.0), q.apply(1.0));
        assert_eq!(q.apply(99.0), q.apply(5.0));
    }

    #[test]
    fn interpolates_between_knots() {
        let q = QuantileColumn::fit(&[1.0, 2.0, 3.0]).unwrap();
        let mid = q.apply(1.5);
        assert!((mid - 0.5 * (q.apply(1.0) + q.apply(2.0))).abs() < 1e-15);
    }

    #[test]
    fn invert_round_trips() {
        let q = QuantileColumn::fit(&[0.3, 1.7, 2.0, 5.5, 9.0]).unwrap();
        for x in [0.3, 1.0, 2.0, 4.1, 9.0] {
            assert!((q.invert(q.apply(x)) - x).abs() < 1e-12);
        }
        assert_eq!(q.invert(-50.0), 0.3);
        assert_eq!(q.invert(50.0), 9.0);
    }

    #[test]
    fn ties_share_a_score() {
        let q = QuantileColumn::fit(&[1.0, 1.0, 2.0, 3.0, 3.0]).unwrap();
        assert_eq!(q.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(q.scores[1], 0.0);
        assert!((q.scores[0] + q.scores[2]).abs() < 1e-12);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let q = QuantileColumn::fit(&[4.0; 10]).unwrap();
        assert_eq!(q.apply(4.0), 0.0);
        assert_eq!(q.apply(-3.0), 0.0);
    }

    #[test]
    fn uniform_input_becomes_standard_normal() {
        let mut rng = SeededRng::new(8);
        let n = 10_000;
        let x = Matrix::from_fn(n, 1, |_, _| rng.uniform_open());
        let ds = Dataset::new(
            vec!["x".into()],
            vec![FeatureKind::Continuous],
            x,
            "y".into(),
            vec![0.0; n],
            Task::Regression,
            vec![Split::Train; n],
        )
        .unwrap();
        let (out, _) = quantile_transform(&ds).unwrap();
        let col = out.features.column(0);
        let mean = col.iter().sum::<f64>() / n as f64;
        let std = population_variance(&col).sqrt();
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.85..=1.15).contains(&std), "std {std}");
    }

    #[test]
    fn categorical_columns_untouched() {
        let ds = Dataset::new(
            vec!["c".into(), "x".into()],
            vec![
                FeatureKind::Categorical {
                    levels: vec!["a".into(), "b".into()],
                },
                FeatureKind::Continuous,
            ],
            Matrix::from_rows(&[vec![0.0, 10.0], vec![1.0, 20.0], vec![1.0, 30.0]]).unwrap(),
            "y".into(),
            vec![0.0; 3],
            Task::Regression,
            vec![Split::Train; 3],
        )
        .unwrap();
        let (out, t) = quantile_transform(&ds).unwrap();
        assert!(t.columns[0].is_none());
        assert_eq!(out.features.column(0), vec![0.0, 1.0, 1.0]);
        assert!((out.features.get(1, 1)).abs() < 1e-15);
    }
}
