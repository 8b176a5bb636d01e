//! Identifiability evaluation: held-out R² against true latents,
//! distribution-matching scores, sensitivity sweeps and estimator studies.

mod disentangle;
mod estimator;
mod r2;
mod sweep;

pub use disentangle::{
    disentanglement_report, EvalConfig, GenerativeModel, MmdReference, R2Report,
};
pub use estimator::{estimator_error_study, EstimatorRow};
pub use r2::{
    fit_kernel_r2, fit_linear_r2, fit_r2, R2Fit, Regressor, KERNEL_RIDGE, LINEAR_RIDGE,
    TRAIN_FRACTION,
};
pub use sweep::{evaluate_run, sweep, RunMetrics, SweepParam, SweepResult, SweepRow};

use crate::autodiff::AutodiffError;
use crate::model::ModelError;
use crate::objective::ObjectiveError;
use crate::train::TrainError;
use crate::world::WorldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate target: column {0} has zero variance on the held-out split")]
    DegenerateTarget(usize),

    #[error("{rows} samples; need at least {needed} (ten per predictor)")]
    TooFewSamples { rows: usize, needed: usize },

    #[error("non-finite predictors or targets")]
    NonFinite,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown sweep parameter '{0}' (expected lambda_inv, lambda_orth, probes_K or eps)")]
    UnknownParam(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Objective(#[from] ObjectiveError),

    #[error(transparent)]
    Train(#[from] TrainError),

    #[error(transparent)]
    World(#[from] WorldError),
}

#[cfg(test)]
mod tests;
