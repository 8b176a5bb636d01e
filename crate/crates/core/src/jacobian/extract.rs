use std::ops::Range;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::JacobianError;
use crate::autodiff::{jacobian_by_vjp, AutodiffError, Tape, Tensor, Var};
use crate::model::{gaussian_tensor, LatentDecoder, ModelError};

/// Where a Jacobian pair was evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub domain: Option<usize>,
}

/// Content block `[d, d_c]` and style block `[d, d_s]` of a map's Jacobian
/// at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianPair {
    pub jc: Tensor,
    pub js: Tensor,
    pub point: Option<LatentPoint>,
}

impl JacobianPair {
    pub fn new(jc: Tensor, js: Tensor) -> Result<Self, JacobianError> {
        if jc.shape().len() != 2 || js.shape().len() != 2 || jc.rows() != js.rows() {
            return Err(JacobianError::Dimension(format!(
                "content block {:?} and style block {:?} must be matrices with equal rows",
                jc.shape(),
                js.shape()
            )));
        }
        for block in [&jc, &js] {
            if let Some(i) = block.data().iter().position(|v| !v.is_finite()) {
                return Err(JacobianError::NonFinite {
                    point: 0,
                    coordinate: i / block.cols().max(1),
                });
            }
        }
        Ok(Self {
            jc,
            js,
            point: None,
        })
    }

    pub fn at(mut self, point: LatentPoint) -> Self {
        self.point = Some(point);
        self
    }

    pub fn output_dim(&self) -> usize {
        self.jc.rows()
    }

    /// `[Jc | Js]`, the Jacobian with respect to the concatenated latent.
    pub fn joint(&self) -> Tensor {
        let (d, dc, ds) = (self.jc.rows(), self.jc.cols(), self.js.cols());
        let mut out = Vec::with_capacity(d * (dc + ds));
        for i in 0..d {
            out.extend_from_slice(self.jc.row(i));
            out.extend_from_slice(self.js.row(i));
        }
        Tensor::matrix(d, dc + ds, out).expect("sized")
    }
}

/// The pair viewed as the linear decoder `x = Jc·c + Js·s` with a standard
/// normal prior; handy for testing estimators against closed forms.
impl LatentDecoder for JacobianPair {
    fn latent_dims(&self) -> (usize, usize) {
        (self.jc.cols(), self.js.cols())
    }

    fn output_dim(&self) -> usize {
        self.jc.rows()
    }

    fn decode_on_tape(&self, tape: &mut Tape, c: Var, s: Var) -> Result<Var, AutodiffError> {
        let jc = tape.leaf(self.jc.clone());
        let js = tape.leaf(self.js.clone());
        let xc = tape.matmul(c, jc, false, true)?;
        let xs = tape.matmul(s, js, false, true)?;
        tape.add(xc, xs)
    }

    fn sample_prior(
        &self,
        batch: usize,
        _domain: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, Tensor), ModelError> {
        let c = gaussian_tensor(&[batch, self.jc.cols()], rng);
        let s = gaussian_tensor(&[batch, self.js.cols()], rng);
        Ok((c, s))
    }
}

/// Jacobian of `map` at `point` restricted to the input columns in `block`,
/// as a `[out_len, block.len()]` matrix. One reverse pass per output
/// coordinate.
pub fn exact_jacobian<F>(
    map: &F,
    point: &Tensor,
    block: Range<usize>,
) -> Result<Tensor, JacobianError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    if block.end > point.len() || block.start > block.end {
        return Err(JacobianError::Dimension(format!(
            "input block {block:?} outside a point of length {}",
            point.len()
        )));
    }
    let full = jacobian_by_vjp(map, point).map_err(|e| match e {
        AutodiffError::NonFinite { coordinate } => JacobianError::NonFinite {
            point: 0,
            coordinate,
        },
        other => other.into(),
    })?;
    let (m, w) = (full.rows(), block.len());
    let mut data = Vec::with_capacity(m * w);
    for i in 0..m {
        data.extend_from_slice(&full.row(i)[block.clone()]);
    }
    Ok(Tensor::matrix(m, w, data)?)
}

/// Content and style Jacobian blocks of a row-wise decoder at every row of
/// `(c, s)`. Costs `d` reverse passes for the whole batch: basis cotangent
/// `k` selects output coordinate `k` in every row at once.
pub fn exact_jacobian_pairs<D: LatentDecoder + ?Sized>(
    decoder: &D,
    c: &Tensor,
    s: &Tensor,
) -> Result<Vec<JacobianPair>, JacobianError> {
    let (dc, ds) = decoder.latent_dims();
    if c.shape().len() != 2
        || s.shape().len() != 2
        || c.rows() != s.rows()
        || c.cols() != dc
        || s.cols() != ds
    {
        return Err(JacobianError::Dimension(format!(
            "latents {:?} and {:?} do not match decoder dims ({dc}, {ds})",
            c.shape(),
            s.shape()
        )));
    }
    let mut tape = Tape::new();
    let cv = tape.leaf(c.clone());
    let sv = tape.leaf(s.clone());
    let x = decoder.decode_on_tape(&mut tape, cv, sv)?;
    pairs_on_tape(&tape, x, cv, sv)
}

/// Basis-cotangent sweep over an already recorded decoder output `x`
/// (`[B, d]`) with latent leaves `cv`, `sv`.
pub(crate) fn pairs_on_tape(
    tape: &Tape,
    x: Var,
    cv: Var,
    sv: Var,
) -> Result<Vec<JacobianPair>, JacobianError> {
    let (c, s) = (tape.value(cv), tape.value(sv));
    let (b, d) = (c.rows(), tape.value(x).cols());
    let (dc, ds) = (c.cols(), s.cols());
    let mut jc = vec![vec![0.0; d * dc]; b];
    let mut js = vec![vec![0.0; d * ds]; b];
    for k in 0..d {
        let mut cot = Tensor::zeros(&[b, d]);
        for r in 0..b {
            cot.data_mut()[r * d + k] = 1.0;
        }
        let g = tape.vjp(x, &cot, &[cv, sv])?;
        for r in 0..b {
            let (gc, gs) = (g[0].row(r), g[1].row(r));
            if gc.iter().chain(gs).any(|v| !v.is_finite()) {
                return Err(JacobianError::NonFinite {
                    point: r,
                    coordinate: k,
                });
            }
            jc[r][k * dc..(k + 1) * dc].copy_from_slice(gc);
            js[r][k * ds..(k + 1) * ds].copy_from_slice(gs);
        }
    }
    jc.into_iter()
        .zip(js)
        .enumerate()
        .map(|(r, (jc, js))| {
            Ok(JacobianPair {
                jc: Tensor::matrix(d, dc, jc)?,
                js: Tensor::matrix(d, ds, js)?,
                point: Some(LatentPoint {
                    c: c.row(r).to_vec(),
                    s: s.row(r).to_vec(),
                    domain: None,
                }),
            })
        })
        .collect()
}
