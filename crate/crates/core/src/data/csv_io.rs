use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_rows, Dataset, FeatureKind, Split, SplitFractions, Task};
use crate::error::{NaeError, Result};
use crate::numerics::Matrix;

/// Column roles of a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub target: String,
    pub task: Task,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Column holding `train` / `val` / `test`; overrides the seeded split.
    #[serde(default)]
    pub split: Option<String>,
}

impl CsvSchema {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NaeError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| NaeError::config(format!("{}: {e}", path.display())))
    }
}

/// Reads a headed CSV. Rows are numbered from 1, header excluded.
pub fn load_csv(path: &Path, schema: &CsvSchema, split_seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| NaeError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| header.iter().position(|h| h == name);

    let target_col = find(&schema.target).ok_or_else(|| {
        NaeError::data(format!(
            "{}: target column '{}' not found in header",
            path.display(),
            schema.target
        ))
    })?;
    let split_col = match &schema.split {
        Some(name) => Some(
            find(name).ok_or_else(|| NaeError::data(format!("{}: split column '{name}' not found", path.display())))?,
        ),
        None => None,
    };
    for name in &schema.categorical {
        if find(name).is_none() {
            return Err(NaeError::data(format!("{}: categorical column '{name}' not found", path.display())));
        }
    }

    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != target_col && Some(c) != split_col)
        .collect();
    let is_cat: Vec<bool> = feature_cols
        .iter()
        .map(|&c| schema.categorical.contains(&header[c]))
        .collect();
    let mut level_maps: Vec<HashMap<String, usize>> = vec![HashMap::new(); feature_cols.len()];
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];

    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut splits = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| NaeError::data(format!("{}: row {row}: {e}", path.display())))?;
        if record.len() != header.len() {
            return Err(NaeError::data(format!(
                "{}: row {row} has {} columns, header has {}",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        for (f, &c) in feature_cols.iter().enumerate() {
            let cell = record[c].trim();
            if is_cat[f] {
                let next = levels[f].len();
                let code = *level_maps[f].entry(cell.to_string()).or_insert_with(|| {
                    levels[f].push(cell.to_string());
                    next
                });
                data.push(code as f64);
            } else {
                data.push(parse_cell(cell, row, &header[c])?);
            }
        }
        let y = parse_cell(record[target_col].trim(), row, &header[target_col])?;
        if schema.task == Task::BinaryClassification && y != 0.0 && y != 1.0 {
            return Err(NaeError::data(format!(
                "row {row}: target '{}' must be 0 or 1 for classification",
                &record[target_col]
            )));
        }
        targets.push(y);
        if let Some(sc) = split_col {
            let s = Split::parse(&record[sc])
                .ok_or_else(|| NaeError::data(format!("row {row}: unknown split label '{}'", &record[sc])))?;
            splits.push(s);
        }
    }
    let n_rows = targets.len();
    if n_rows == 0 {
        return Err(NaeError::data(format!("{}: no data rows", path.display())));
    }
    if split_col.is_none() {
        splits = split_rows(n_rows, SplitFractions::default(), split_seed)?;
    }
    let features = Matrix::new(n_rows, feature_cols.len(), data)?;
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let kinds = is_cat
        .iter()
        .zip(levels)
        .map(|(&cat, lv)| {
            if cat {
                FeatureKind::Categorical { levels: lv }
            } else {
                FeatureKind::Continuous
            }
        })
        .collect();
    Dataset::new(names, kinds, features, header[target_col].clone(), targets, schema.task, splits)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(NaeError::data(format!("row {row}, column '{column}': cannot parse '{cell}' as a number"))),
    }
}
