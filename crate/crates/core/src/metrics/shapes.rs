use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MetricsConfig;
use crate::data::{Dataset, FeatureKind, QuantileTransform};
use crate::error::{NaeError, Result};
use crate::model::{aggregate, Dropout, Mode, Nae, Noise};
use crate::numerics::{pivot_mean, Matrix};

/// One grid point of a feature's shape function. Contribution and bounds are
/// centered by the feature's mean contribution over the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub feature: usize,
    pub name: String,
    /// Grid value in data units (level code for categorical features).
    pub value: f64,
    /// Display value: the number itself, or the level name.
    pub label: String,
    pub contribution: f64,
    pub upper: f64,
    pub lower: f64,
    /// Bin count relative to the fullest bin.
    pub density: f64,
}

/// Shape functions of every feature over the rows of `dataset`.
///
/// Continuous features use `grid_points` evenly spaced values over the observed
/// range, each sample counted in the nearest grid bin; categorical features use
/// their levels. The contribution at a grid value averages `o_i` at that value
/// over the gating contexts of the samples in its bin (all samples when the bin
/// is empty).
///
/// With a `transform`, `dataset` is in raw units: the grid is uniform in raw
/// units and the model sees transformed values.
pub fn extract_shapes(
    nae: &Nae,
    dataset: &Dataset,
    transform: Option<&QuantileTransform>,
    cfg: &MetricsConfig,
) -> Result<Vec<ShapeRecord>> {
    cfg.validate()?;
    let x = &dataset.features;
    let n_rows = x.rows();
    let k = nae.config.n_experts;
    if n_rows == 0 {
        return Err(NaeError::usage("shape extraction needs at least one sample"));
    }
    let model_x = match transform {
        Some(t) => t.apply(dataset)?.features,
        None => x.clone(),
    };
    let trace = nae.forward_batch(&model_x, Mode::Eval, Dropout::default(), Noise::Off)?;
    let mut records = Vec::new();
    for i in 0..dataset.n_features() {
        let column = x.column(i);
        let (grid, labels, bin_of): (Vec<f64>, Vec<String>, Vec<usize>) = match &dataset.kinds[i] {
            FeatureKind::Categorical { levels } => (
                (0..levels.len()).map(|c| c as f64).collect(),
                levels.clone(),
                column.iter().map(|&v| v as usize).collect(),
            ),
            FeatureKind::Continuous => {
                let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(lo.is_finite() && hi.is_finite()) {
                    log::warn!("feature '{}' has no finite range; skipped", dataset.names[i]);
                    continue;
                }
                if lo == hi {
                    (vec![lo], vec![format!("{lo}")], vec![0; n_rows])
                } else {
                    let g = cfg.grid_points;
                    let grid: Vec<f64> = (0..g)
                        .map(|p| if p + 1 == g { hi } else { lo + (hi - lo) * p as f64 / (g - 1) as f64 })
                        .collect();
                    let bins = column
                        .iter()
                        .map(|&v| (((v - lo) / (hi - lo)) * (g - 1) as f64).round() as usize)
                        .collect();
                    let labels = grid.iter().map(|v| format!("{v}")).collect();
                    (grid, labels, bins)
                }
            }
        };
        let mut groups = vec![Vec::new(); grid.len()];
        for (t, &b) in bin_of.iter().enumerate() {
            groups[b].push(t);
        }
        let max_count = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let all: Vec<usize> = (0..n_rows).collect();

        let model_grid: Vec<f64> = match transform {
            Some(t) => grid.iter().map(|&v| t.transform_value(i, v)).collect(),
            None => grid.clone(),
        };
        let enc_grid = nae.encode_feature(i, &model_grid)?;
        let out_grid = nae.expert_outputs(i, &enc_grid);
        let own_grid = nae.gate_term(i, i, &enc_grid);
        let own_data = nae.gate_term(i, i, &trace.encodings[i]);
        let center = trace.contributions.column(i).iter().sum::<f64>() / n_rows as f64;

        let mut logits = vec![0.0; k];
        for (g, &v) in grid.iter().enumerate() {
            let contexts = if groups[g].is_empty() { &all } else { &groups[g] };
            let outputs = out_grid.row(g);
            let values = contexts.iter().map(|&s| {
                let phi = &trace.gate_logits.row(s)[i * k..(i + 1) * k];
                for kk in 0..k {
                    logits[kk] = phi[kk] - own_data.get(s, kk) + own_grid.get(g, kk);
                }
                aggregate(outputs, &nae.relevance_eval(&logits))
            });
            let mean = pivot_mean(values.collect::<Vec<_>>());
            let upper = outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lower = outputs.iter().copied().fold(f64::INFINITY, f64::min);
            records.push(ShapeRecord {
                feature: i,
                name: dataset.names[i].clone(),
                value: v,
                label: labels[g].clone(),
                contribution: mean - center,
                upper: upper - center,
                lower: lower - center,
                density: groups[g].len() as f64 / max_count as f64,
            });
        }
    }
    Ok(records)
}

fn file_stem(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("shape_{index}_{clean}.csv")
}

/// Writes one CSV per feature plus `shapes_index.csv`; returns the written paths.
pub fn write_shapes(records: &[ShapeRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| NaeError::io(dir, e))?;
    let mut features: Vec<(usize, String)> = records.iter().map(|r| (r.feature, r.name.clone())).collect();
    features.dedup();
    let mut written = Vec::new();
    let index_path = dir.join("shapes_index.csv");
    let mut index = csv::Writer::from_path(&index_path)?;
    index.write_record(["feature", "name", "file", "points"])?;
    for (f, name) in &features {
        let path = dir.join(file_stem(*f, name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["feature", "value", "contribution", "upper", "lower", "density"])?;
        let rows: Vec<&ShapeRecord> = records.iter().filter(|r| r.feature == *f).collect();
        for r in &rows {
            w.write_record([
                r.name.clone(),
                r.label.clone(),
                r.contribution.to_string(),
                r.upper.to_string(),
                r.lower.to_string(),
                r.density.to_string(),
            ])?;
        }
        w.flush().map_err(|e| NaeError::io(&path, e))?;
        let file_name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        index.write_record([f.to_string(), name.clone(), file_name, rows.len().to_string()])?;
        written.push(path);
    }
    index.flush().map_err(|e| NaeError::io(&index_path, e))?;
    written.push(index_path);
    Ok(written)
}

/// Writes an interaction surface as `xi,xj,value` rows, centered by its grid mean.
pub fn write_interaction_csv(path: &Path, grid_i: &[f64], grid_j: &[f64], surface: &Matrix) -> Result<()> {
    let mean = surface.data().iter().sum::<f64>() / surface.len() as f64;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| NaeError::io(path, e))?);
    let io = |e| NaeError::io(path, e);
    writeln!(f, "xi,xj,value").map_err(io)?;
    for (a, xi) in grid_i.iter().enumerate() {
        for (b, xj) in grid_j.iter().enumerate() {
            writeln!(f, "{xi},{xj},{}", surface.get(a, b) - mean).map_err(io)?;
        }
    }
    f.flush().map_err(io)
}
