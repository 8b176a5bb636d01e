//! Exact Jacobian extraction and subspace analysis: principal angles
//! between the content and style tangent ranges, numerical ranks, subspace
//! distances, the style-leakage bound under inexact orthogonality, and cost
//! accounting for the exact and probe-based regularizers.

mod angles;
mod bound;
mod cost;
mod extract;
mod report;

pub use angles::{principal_angles, subspace_distance, AngleReport, RANK_TOL};
pub use bound::{matched_bound_inputs, robustness_bound_check, BoundCheck, BoundInputs};
pub use cost::{cost_audit, cost_formula, CostAudit, CostMode};
pub use extract::{exact_jacobian, exact_jacobian_pairs, JacobianPair, LatentPoint};
pub use report::{orthogonal_learner_inputs, point_reports, PointReport, ReportConfig};

use crate::autodiff::{AutodiffError, Tensor};
use crate::model::ModelError;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error("degenerate subspace: {0} block has no nonzero singular value")]
    DegenerateSubspace(&'static str),

    #[error("{what} rank-deficient (σ_min {sigma_min:e} ≤ tolerance {tol:e}){note}")]
    RankDeficient {
        what: &'static str,
        sigma_min: f64,
        tol: f64,
        note: &'static str,
    },

    #[error("non-finite Jacobian row {coordinate} at point {point}")]
    NonFinite { point: usize, coordinate: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Objective(Box<crate::objective::ObjectiveError>),
}

pub(crate) fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Tensor::matrix(m.nrows(), m.ncols(), data).expect("sized")
}

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}
