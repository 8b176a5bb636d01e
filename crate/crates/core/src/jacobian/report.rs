use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    exact_jacobian_pairs, from_dmatrix, principal_angles, robustness_bound_check, to_dmatrix,
    BoundCheck, BoundInputs, JacobianError, JacobianPair, RANK_TOL,
};
use crate::autodiff::Tensor;
use crate::model::LatentDecoder;
use crate::objective::{orth_loss_exact, orth_loss_probe, ProbeKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub probes: usize,
    pub probe_kind: ProbeKind,
    pub eps: f64,
    pub rank_tol: f64,
    /// Tilt used on the right-hand side of the bound; the point's own
    /// implied tilt when absent.
    pub xi: Option<f64>,
    /// Absolute slack when deciding whether the bound holds.
    pub bound_tol: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            probes: 8,
            probe_kind: ProbeKind::Gaussian,
            eps: 1e-8,
            rank_tol: RANK_TOL,
            xi: None,
            bound_tol: 1e-10,
        }
    }
}

/// One audited point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub point_id: usize,
    pub angles: Vec<f64>,
    pub xi_implied: f64,
    pub sigma_min: f64,
    /// `[rank_c, rank_s]`.
    pub ranks: [usize; 2],
    pub orth_loss_exact: f64,
    pub orth_loss_probe: f64,
    /// Absent when the style block is rank-deficient.
    pub bound_lhs: Option<f64>,
    pub bound_rhs: Option<f64>,
    pub bound_holds: Option<bool>,
}

impl PointReport {
    pub fn set_bound(&mut self, check: Option<&BoundCheck>) {
        self.bound_lhs = check.map(|b| b.lhs);
        self.bound_rhs = check.map(|b| b.rhs);
        self.bound_holds = check.map(|b| b.holds);
    }
}

/// Bound factors for a learner that reproduces a map with Jacobian blocks
/// `(jc, js)` while keeping its own content and style ranges orthogonal:
/// its style range is `R(js)`, so the leaked Jacobian is
/// `(jsᵀjs)⁻¹·jsᵀ·jc`, exactly zero when the true ranges are orthogonal.
pub fn orthogonal_learner_inputs(jc: &Tensor, js: &Tensor) -> Result<BoundInputs, JacobianError> {
    let a = to_dmatrix(jc);
    let b = to_dmatrix(js);
    if a.nrows() != b.nrows() {
        return Err(JacobianError::Dimension(format!(
            "blocks {:?} and {:?} must share their row count",
            jc.shape(),
            js.shape()
        )));
    }
    let gram: DMatrix<f64> = b.transpose() * &b;
    let rhs = b.transpose() * &a;
    let leak = gram
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(JacobianError::RankDeficient {
            what: "style Jacobian",
            sigma_min: 0.0,
            tol: 0.0,
            note: ", robustness bound inapplicable",
        })?;
    Ok(BoundInputs {
        jc_true: jc.clone(),
        js_learned: js.clone(),
        jc_learned_style: from_dmatrix(&leak),
    })
}

/// Per-point angles, ranks, exact and probe losses at every row of
/// `(c, s)`, with the bound evaluated for the orthogonal learner of the
/// decoder itself. Callers with a matched learned model overwrite the bound
/// fields via [`PointReport::set_bound`].
pub fn point_reports<D: LatentDecoder + ?Sized, R: Rng + ?Sized>(
    decoder: &D,
    c: &Tensor,
    s: &Tensor,
    cfg: &ReportConfig,
    rng: &mut R,
) -> Result<(Vec<PointReport>, Vec<JacobianPair>), JacobianError> {
    let pairs = exact_jacobian_pairs(decoder, c, s)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let angles = principal_angles(&pair.jc, &pair.js, cfg.rank_tol)?;
        let exact = orth_loss_exact(&pair.jc, &pair.js, cfg.eps).map_err(objective_err)?;
        let ci = Tensor::matrix(1, c.cols(), c.row(i).to_vec())?;
        let si = Tensor::matrix(1, s.cols(), s.row(i).to_vec())?;
        let probe = orth_loss_probe(decoder, &ci, &si, cfg.probes, cfg.probe_kind, cfg.eps, rng)
            .map_err(objective_err)?;
        let xi = cfg.xi.unwrap_or(angles.xi_implied);
        let bound = orthogonal_learner_inputs(&pair.jc, &pair.js)
            .and_then(|inp| robustness_bound_check(&inp, xi, cfg.bound_tol))
            .ok();
        let mut rep = PointReport {
            point_id: i,
            xi_implied: angles.xi_implied,
            sigma_min: angles.sigma_min_style,
            ranks: [angles.rank_c, angles.rank_s],
            angles: angles.principal_angles,
            orth_loss_exact: exact,
            orth_loss_probe: probe,
            bound_lhs: None,
            bound_rhs: None,
            bound_holds: None,
        };
        rep.set_bound(bound.as_ref());
        out.push(rep);
    }
    Ok((out, pairs))
}

fn objective_err(e: crate::objective::ObjectiveError) -> JacobianError {
    JacobianError::Objective(Box::new(e))
}
