pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod theory;
pub mod training;

pub use error::{NaeError, Result};
pub use model::{Mode, ModelConfig, Nae, Variant};
