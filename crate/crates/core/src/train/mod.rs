//! Optimizer, alternating adversarial training loop, run artifacts and the
//! MMD two-sample diagnostic.

mod adam;
mod engine;
mod mmd;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use engine::{
    train, train_discriminator, train_observed, DomainSource, ExperimentConfig, Halt, RunFiles,
    TrainOutcome, DIVERGENCE_LIMIT,
};
pub use mmd::{median_bandwidth, mmd, Bandwidth};


use std::path::PathBuf;

use crate::autodiff::AutodiffError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Objective(#[from] crate::objective::ObjectiveError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}
