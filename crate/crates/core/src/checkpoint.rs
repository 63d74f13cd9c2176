//! JSON checkpoints: model, training settings, feature schema, input transform and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, QuantileTransform, Task};
use crate::error::{NaeError, Result};
use crate::model::Nae;
use crate::training::{seed_offsets, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub features: Vec<FeatureSchema>,
    pub target: String,
    pub task: Task,
}

impl DataSchema {
    pub fn of(dataset: &Dataset) -> Self {
        DataSchema {
            features: dataset
                .names
                .iter()
                .zip(&dataset.kinds)
                .map(|(name, kind)| FeatureSchema {
                    name: name.clone(),
                    kind: kind.clone(),
                })
                .collect(),
            target: dataset.target_name.clone(),
            task: dataset.task,
        }
    }

    /// Error listing expected and found features when `dataset` does not match.
    pub fn check(&self, dataset: &Dataset) -> Result<()> {
        let found = DataSchema::of(dataset);
        if found.features == self.features {
            return Ok(());
        }
        let describe = |s: &DataSchema| {
            s.features
                .iter()
                .map(|f| match &f.kind {
                    FeatureKind::Continuous => f.name.clone(),
                    FeatureKind::Categorical { levels } => format!("{}[{} levels]", f.name, levels.len()),
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        Err(NaeError::data(format!(
            "dataset does not match the checkpoint schema; expected features [{}], found [{}]",
            describe(self),
            describe(&found)
        )))
    }
}

/// The run seed and the sub-seeds derived from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
}

impl SeedRecord {
    pub fn from_seed(seed: u64) -> Self {
        SeedRecord {
            seed,
            data: seed.wrapping_add(seed_offsets::DATA),
            split: seed.wrapping_add(seed_offsets::SPLIT),
            init: seed.wrapping_add(seed_offsets::INIT),
            shuffle: seed.wrapping_add(seed_offsets::SHUFFLE),
            noise: seed.wrapping_add(seed_offsets::NOISE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Nae,
    pub train: TrainConfig,
    pub schema: DataSchema,
    pub transform: QuantileTransform,
    pub seeds: SeedRecord,
}

impl Checkpoint {
    pub fn new(model: Nae, train: TrainConfig, schema: DataSchema, transform: QuantileTransform) -> Self {
        let seeds = SeedRecord::from_seed(train.seed);
        Checkpoint {
            format_version: FORMAT_VERSION,
            model,
            train,
            schema,
            transform,
            seeds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(NaeError::config(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.model.config.validate()?;
        ck.model.check_shapes()?;
        if ck.transform.columns.len() != ck.schema.features.len() || ck.model.config.n_features != ck.schema.features.len() {
            return Err(NaeError::config("checkpoint schema, transform and model disagree on the feature count"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| NaeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NaeError::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
