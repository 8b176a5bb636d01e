//! The generative parameterization: dependent latent sampling, per-domain
//! encoders and decoders, a shared generator and per-domain discriminators,
//! plus latent inversion and translation.

mod bundle;
mod checkpoint;
mod invert;
mod latent;
mod mlp;
mod plan;

pub use bundle::{ArchConfig, BoundBundle, Generated, ModelBundle, ParamGroup};
pub use checkpoint::{Checkpoint, NamedTensor, RngState, CHECKPOINT_VERSION};
pub use invert::{
    invert_sample, translate, InversionConfig, InversionResult, LatentDecoder, Translation,
};
pub use latent::{gaussian_tensor, sample_latents, LatentBatch, LatentSeed};
pub use mlp::{BoundMlp, Dense, Head, Mlp};
pub use plan::DimensionPlan;

use crate::autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dimension plan: {0}")]
    InvalidPlan(String),

    #[error("dimension mismatch: {what} expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain {domain} out of range for {domains} domains")]
    Domain { domain: usize, domains: usize },

    #[error("inversion diverged at step {step} (divergence trace: {trace:?})")]
    InversionDiverged { step: usize, trace: Vec<f64> },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
