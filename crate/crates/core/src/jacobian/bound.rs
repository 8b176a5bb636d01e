use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{from_dmatrix, spectral_norm, to_dmatrix, JacobianError, RANK_TOL};
use crate::autodiff::Tensor;

/// Factors of the style-leakage bound at one matched point.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputs {
    /// Content Jacobian of the true generator, `[d, d_c]`.
    pub jc_true: Tensor,
    /// Style Jacobian of the learned generator at the matched latent, `[d, d_s]`.
    pub js_learned: Tensor,
    /// Jacobian of the learned style with respect to the true content, `[d̂_s, d_c]`.
    pub jc_learned_style: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `‖J_c ŝ‖₂`.
    pub lhs: f64,
    /// `sin ξ · ‖J_c g‖₂ / σ_min(J_ŝ ĝ)`.
    pub rhs: f64,
    pub sigma_min: f64,
    pub holds: bool,
}

/// Compares the leakage of true content into the learned style against
/// `sin ξ · ‖J_c g‖₂ / σ_min(J_ŝ ĝ)`; `holds` allows an absolute slack `tol`.
pub fn robustness_bound_check(
    inputs: &BoundInputs,
    xi: f64,
    tol: f64,
) -> Result<BoundCheck, JacobianError> {
    let jc = to_dmatrix(&inputs.jc_true);
    let js = to_dmatrix(&inputs.js_learned);
    let leak = to_dmatrix(&inputs.jc_learned_style);
    if jc.nrows() != js.nrows() || leak.nrows() != js.ncols() || leak.ncols() != jc.ncols() {
        return Err(JacobianError::Dimension(format!(
            "bound factors {:?}, {:?}, {:?} are inconsistent",
            inputs.jc_true.shape(),
            inputs.js_learned.shape(),
            inputs.jc_learned_style.shape()
        )));
    }
    let sv = js.singular_values();
    let smax = sv.max();
    let smin = if js.ncols() > js.nrows() {
        0.0
    } else {
        sv.min()
    };
    if !(smin > RANK_TOL * smax) {
        return Err(JacobianError::RankDeficient {
            what: "style Jacobian",
            sigma_min: smin,
            tol: RANK_TOL * smax,
            note: ", robustness bound inapplicable",
        });
    }
    let lhs = spectral_norm(&leak);
    let rhs = xi.sin() * spectral_norm(&jc) / smin;
    Ok(BoundCheck {
        lhs,
        rhs,
        sigma_min: smin,
        holds: lhs <= rhs + tol,
    })
}

/// Bound factors at a point where the learned generator `ĝ` reproduces the
/// true one: differentiating `g(c, s) = ĝ(γ(c), δ(c, s))` in `c` gives
/// `[J_ĉ ĝ | J_ŝ ĝ]·[J_c γ; J_c δ] = J_c g`, solved here in the
/// least-squares sense.
pub fn matched_bound_inputs(
    jc_true: &Tensor,
    jc_learned: &Tensor,
    js_learned: &Tensor,
) -> Result<BoundInputs, JacobianError> {
    let g = to_dmatrix(jc_true);
    let a = to_dmatrix(jc_learned);
    let b = to_dmatrix(js_learned);
    if g.nrows() != a.nrows() || a.nrows() != b.nrows() {
        return Err(JacobianError::Dimension(format!(
            "blocks {:?}, {:?}, {:?} must share their row count",
            jc_true.shape(),
            jc_learned.shape(),
            js_learned.shape()
        )));
    }
    let (dc_hat, ds_hat) = (a.ncols(), b.ncols());
    let mut joint = DMatrix::zeros(g.nrows(), dc_hat + ds_hat);
    joint.columns_mut(0, dc_hat).copy_from(&a);
    joint.columns_mut(dc_hat, ds_hat).copy_from(&b);
    let svd = joint.svd(true, true);
    let smax = svd.singular_values.max();
    let sol = svd
        .solve(&g, RANK_TOL * smax)
        .map_err(|e| JacobianError::Dimension(e.to_string()))?;
    let leak = sol.rows(dc_hat, ds_hat).into_owned();
    Ok(BoundInputs {
        jc_true: jc_true.clone(),
        js_learned: js_learned.clone(),
        jc_learned_style: from_dmatrix(&leak),
    })
}
