use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{to_dmatrix, JacobianError};
use crate::autodiff::Tensor;

/// Relative singular-value cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    /// Ascending, in `[0, π/2]`, one per dimension of the smaller subspace.
    pub principal_angles: Vec<f64>,
    pub smallest_angle: f64,
    /// Smallest singular value of the style block over all `d_s` columns.
    pub sigma_min_style: f64,
    pub rank_c: usize,
    pub rank_s: usize,
    /// `π/2 − smallest_angle`, clamped to `[0, π/2]`.
    pub xi_implied: f64,
    /// The style block has full column rank, so the identifiability
    /// guarantees apply at this point.
    pub style_full_rank: bool,
}

/// Orthonormal basis of the numerical column space plus the singular values.
fn range_basis(
    m: &DMatrix<f64>,
    rank_tol: f64,
    which: &'static str,
) -> Result<(DMatrix<f64>, Vec<f64>), JacobianError> {
    if m.is_empty() || m.iter().any(|v| !v.is_finite()) {
        return Err(JacobianError::DegenerateSubspace(which));
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax <= 0.0 {
        return Err(JacobianError::DegenerateSubspace(which));
    }
    // nalgebra does not promise sorted singular values.
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > rank_tol * smax).collect();
    let q = DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])]);
    Ok((q, sv))
}

/// Ascending principal angles between two orthonormal bases, with the
/// smaller one taken as `b`. Cosines come from `aᵀb`; angles below π/4 are
/// recomputed from the sines of the residual `b − a·aᵀb`, where arccos
/// loses accuracy.
fn angles_between(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    angles_and_max_cos(a, b).0
}

/// Angles plus the largest cosine, from which the tilt `π/2 − θ_min` is
/// recovered as `asin` without cancellation.
fn angles_and_max_cos(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let (a, b) = if a.ncols() >= b.ncols() {
        (a, b)
    } else {
        (b, a)
    };
    let k = b.ncols();
    if k == 0 {
        return (Vec::new(), 0.0);
    }
    let proj = a.transpose() * b;
    let mut cos: Vec<f64> = proj
        .singular_values()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    let resid = b - a * &proj;
    let mut sin: Vec<f64> = resid
        .singular_values()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    let angles = cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| if c * c > 0.5 { s.asin() } else { c.acos() })
        .collect();
    (angles, cos[0])
}

/// Principal angles between the column spaces of `jc` (`[d, d_c]`) and
/// `js` (`[d, d_s]`), with ranks counted at `rank_tol·σ_max`.
pub fn principal_angles(
    jc: &Tensor,
    js: &Tensor,
    rank_tol: f64,
) -> Result<AngleReport, JacobianError> {
    if jc.shape().len() != 2 || js.shape().len() != 2 || jc.rows() != js.rows() {
        return Err(JacobianError::Dimension(format!(
            "blocks {:?} and {:?} must share their row count",
            jc.shape(),
            js.shape()
        )));
    }
    let (qc, _) = range_basis(&to_dmatrix(jc), rank_tol, "content")?;
    let (qs, sv_s) = range_basis(&to_dmatrix(js), rank_tol, "style")?;
    let (mut angles, max_cos) = angles_and_max_cos(&qc, &qs);
    angles.sort_by(|x, y| x.total_cmp(y));
    let smallest = angles.first().copied().unwrap_or(FRAC_PI_2);
    let xi_implied = if max_cos * max_cos > 0.5 {
        FRAC_PI_2 - smallest
    } else {
        max_cos.asin()
    };
    let sigma_min_style = if js.cols() > js.rows() {
        0.0
    } else {
        sv_s.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(AngleReport {
        principal_angles: angles,
        smallest_angle: smallest,
        sigma_min_style,
        rank_c: qc.ncols(),
        rank_s: qs.ncols(),
        xi_implied: xi_implied.clamp(0.0, FRAC_PI_2),
        style_full_rank: qs.ncols() == js.cols(),
    })
}

/// `‖P_A − P_B‖₂` for the orthogonal projectors onto the column spaces of
/// two full-column-rank blocks: the sine of the largest principal angle,
/// or 1 when the dimensions differ.
pub fn subspace_distance(a: &Tensor, b: &Tensor) -> Result<f64, JacobianError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.rows() != b.rows() {
        return Err(JacobianError::Dimension(format!(
            "blocks {:?} and {:?} must share their row count",
            a.shape(),
            b.shape()
        )));
    }
    let check = |m: &Tensor, what: &'static str| -> Result<DMatrix<f64>, JacobianError> {
        let (q, sv) = range_basis(&to_dmatrix(m), RANK_TOL, what)?;
        if q.ncols() < m.cols() {
            let smax = sv.iter().cloned().fold(0.0, f64::max);
            return Err(JacobianError::RankDeficient {
                what,
                sigma_min: sv.iter().cloned().fold(f64::INFINITY, f64::min),
                tol: RANK_TOL * smax,
                note: "",
            });
        }
        Ok(q)
    };
    let qa = check(a, "first block")?;
    let qb = check(b, "second block")?;
    if qa.ncols() != qb.ncols() {
        return Ok(1.0);
    }
    let largest = angles_between(&qa, &qb).into_iter().fold(0.0, f64::max);
    Ok(largest.sin().clamp(0.0, 1.0))
}
