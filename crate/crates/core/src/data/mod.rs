//! Datasets: simulation generators, CSV ingestion, splitting and the quantile transform.

mod csv_io;
mod quantile;
mod sim;

pub use csv_io::{load_csv, CsvSchema};
pub use quantile::{quantile_transform, QuantileColumn, QuantileTransform};
pub use sim::{generate, SimKind, SimSpec};

use serde::{Deserialize, Serialize};

use crate::error::{NaeError, Result};
use crate::model::EncoderInput;
use crate::numerics::{Matrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    #[serde(alias = "classification")]
    BinaryClassification,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Stored as integer codes indexing `levels`.
    Categorical { levels: Vec<String> },
}

impl FeatureKind {
    pub fn encoder_input(&self) -> EncoderInput {
        match self {
            FeatureKind::Continuous => EncoderInput::Continuous,
            FeatureKind::Categorical { levels } => EncoderInput::Categorical(levels.len()),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" | "valid" | "validation" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Fractions of rows sent to the train and validation splits; the rest is test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.7, val: 0.15 }
    }
}

/// Seeded shuffle of `0..n`, cut into train / val / test by `fractions`.
pub fn split_rows(n: usize, fractions: SplitFractions, seed: u64) -> Result<Vec<Split>> {
    let SplitFractions { train, val } = fractions;
    if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
        return Err(NaeError::config(format!("invalid split fractions {train}/{val}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (pos, &row) in order.iter().enumerate() {
        splits[row] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    /// `N × n`; categorical columns hold level codes.
    pub features: Matrix,
    pub target_name: String,
    pub targets: Vec<f64>,
    pub task: Task,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        kinds: Vec<FeatureKind>,
        features: Matrix,
        target_name: String,
        targets: Vec<f64>,
        task: Task,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let ds = Dataset {
            names,
            kinds,
            features,
            target_name,
            targets,
            task,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.cols();
        let rows = self.features.rows();
        if self.names.len() != n || self.kinds.len() != n {
            return Err(NaeError::data(format!(
                "{} names and {} kinds for {n} feature columns",
                self.names.len(),
                self.kinds.len()
            )));
        }
        if self.targets.len() != rows || self.splits.len() != rows {
            return Err(NaeError::data(format!(
                "{rows} feature rows, {} targets, {} split labels",
                self.targets.len(),
                self.splits.len()
            )));
        }
        for (c, kind) in self.kinds.iter().enumerate() {
            if let FeatureKind::Categorical { levels } = kind {
                for r in 0..rows {
                    let v = self.features.get(r, c);
                    if crate::model::category_code(v, levels.len()).is_err() {
                        return Err(NaeError::data(format!(
                            "row {}: code {v} of '{}' outside its {} levels",
                            r + 1,
                            self.names[c],
                            levels.len()
                        )));
                    }
                }
            }
        }
        if self.task == Task::BinaryClassification {
            if let Some(r) = self.targets.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(NaeError::data(format!("row {}: classification target must be 0 or 1", r + 1)));
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn encoder_inputs(&self) -> Vec<EncoderInput> {
        self.kinds.iter().map(FeatureKind::encoder_input).collect()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.splits[r] == split).collect()
    }

    /// Feature rows and targets of one split.
    pub fn subset(&self, split: Split) -> (Matrix, Vec<f64>) {
        let idx = self.indices(split);
        let x = self.features.select_rows(&idx);
        let y = idx.iter().map(|&r| self.targets[r]).collect();
        (x, y)
    }

    /// Display value of a stored cell: the level name for categorical columns.
    pub fn cell_label(&self, row: usize, col: usize) -> String {
        let v = self.features.get(row, col);
        match &self.kinds[col] {
            FeatureKind::Continuous => format!("{v}"),
            FeatureKind::Categorical { levels } => levels[v as usize].clone(),
        }
    }

    /// Writes a CSV with the feature columns, the target and a `split` column.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| NaeError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        header.push("split");
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = (0..self.n_features()).map(|c| self.cell_label(r, c)).collect();
            rec.push(format!("{}", self.targets[r]));
            rec.push(self.splits[r].as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| NaeError::io(path, e))?;
        Ok(())
    }
}
