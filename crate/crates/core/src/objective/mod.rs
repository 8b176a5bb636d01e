//! Training objective: per-domain adversarial value, latent invertibility
//! penalty and the Jacobian-orthogonality regularizer in exact and
//! probe-based forms.

mod gan;
mod inv;
mod orth;
mod report;

pub use gan::{disc_value_on_tape, gan_loss, generator_adv_on_tape, GanValue, PROB_CLAMP};
pub use inv::{inv_loss, inv_loss_on_tape};
pub use orth::{
    draw_probes, orth_exact_per_point, orth_loss_exact, orth_loss_probe, orth_loss_probe_on_tape,
    orth_probe_from_blocks, ProbeKind,
};
pub(crate) use report::report_from_terms;
pub use report::{
    generator_objective_on_tape, oracle_orth, total_loss, GeneratorTerms, LossReport, LossWeights,
};

use crate::autodiff::AutodiffError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("need at least one probe, got {0}")]
    NoProbes(usize),

    #[error("invalid loss weights: {0}")]
    Weights(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Jacobian(#[from] crate::jacobian::JacobianError),
}
