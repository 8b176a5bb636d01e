use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ObjectiveError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::jacobian::exact_jacobian_pairs;
use crate::model::LatentDecoder;

/// Distribution of the random probes `v` with `E[vvᵀ] = I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Gaussian,
    Rademacher,
    /// `v_k = √d·e_k` for `k = 1..d`; resolves the identity exactly.
    BasisEnumeration,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Gaussian => "gaussian",
            ProbeKind::Rademacher => "rademacher",
            ProbeKind::BasisEnumeration => "basis-enumeration",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(ProbeKind::Gaussian),
            "rademacher" => Ok(ProbeKind::Rademacher),
            "basis-enumeration" | "basis" => Ok(ProbeKind::BasisEnumeration),
            other => Err(format!(
                "unknown probe kind '{other}' (expected gaussian, rademacher or basis-enumeration)"
            )),
        }
    }
}

impl ProbeKind {
    /// Number of probes actually drawn for requested `k` in dimension `d`.
    pub fn count(&self, k: usize, d: usize) -> usize {
        match self {
            ProbeKind::BasisEnumeration => d,
            _ => k,
        }
    }
}

/// `‖JsᵀJc‖_F² / (‖Jc‖_F²·‖Js‖_F² + eps)` for blocks of shape `[d, d_c]`
/// and `[d, d_s]`.
pub fn orth_loss_exact(jc: &Tensor, js: &Tensor, eps: f64) -> Result<f64, ObjectiveError> {
    if jc.shape().len() != 2 || js.shape().len() != 2 || jc.shape()[0] != js.shape()[0] {
        return Err(ObjectiveError::Dimension(format!(
            "Jacobian blocks {:?} and {:?} must share their row count",
            jc.shape(),
            js.shape()
        )));
    }
    let (d, dc, ds) = (jc.shape()[0], jc.shape()[1], js.shape()[1]);
    let mut cross = 0.0;
    for p in 0..ds {
        for q in 0..dc {
            let m: f64 = (0..d).map(|i| js.get(i, p) * jc.get(i, q)).sum();
            cross += m * m;
        }
    }
    Ok(cross / (jc.squared_norm() * js.squared_norm() + eps))
}

/// `count` probe tensors of shape `[rows, d]`; every row gets an
/// independent draw, except in basis mode where probe `k` is `√d·e_k` in
/// every row.
pub fn draw_probes<R: Rng + ?Sized>(
    kind: ProbeKind,
    count: usize,
    rows: usize,
    d: usize,
    rng: &mut R,
) -> Vec<Tensor> {
    let count = kind.count(count, d);
    (0..count)
        .map(|k| {
            let data: Vec<f64> = match kind {
                ProbeKind::Gaussian => (0..rows * d).map(|_| rng.sample(StandardNormal)).collect(),
                ProbeKind::Rademacher => (0..rows * d)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect(),
                ProbeKind::BasisEnumeration => {
                    let mut v = vec![0.0; rows * d];
                    for r in 0..rows {
                        v[r * d + k] = (d as f64).sqrt();
                    }
                    v
                }
            };
            Tensor::new(vec![rows, d], data).expect("sized")
        })
        .collect()
}

/// Constant 0/1 matrices that lay out the per-row outer product
/// `b aᵀ` (flattened `[d_s·d_c]`) as `(b·R) ⊙ (a·T)`.
fn outer_layout(dc: usize, ds: usize) -> (Tensor, Tensor) {
    let m = dc * ds;
    let mut rep = Tensor::zeros(&[ds, m]);
    let mut tile = Tensor::zeros(&[dc, m]);
    for p in 0..ds {
        for q in 0..dc {
            rep.data_mut()[p * m + p * dc + q] = 1.0;
            tile.data_mut()[q * m + p * dc + q] = 1.0;
        }
    }
    (rep, tile)
}

/// Probe estimate of the orthogonality loss, recorded on the tape so it can
/// be differentiated with respect to anything upstream of `output`.
///
/// `output` is `[B, d]`, produced from `content` `[B, d_c]` and `style`
/// `[B, d_s]` row by row. Each probe tensor is `[B, d]` and costs one
/// reverse pass. The per-row ratio is averaged over rows.
pub fn orth_loss_probe_on_tape(
    tape: &mut Tape,
    output: Var,
    content: Var,
    style: Var,
    probes: &[Tensor],
    eps: f64,
) -> Result<Var, ObjectiveError> {
    if probes.is_empty() {
        return Err(ObjectiveError::NoProbes(0));
    }
    let dc = tape.value(content).cols();
    let ds = tape.value(style).cols();
    let k = probes.len() as f64;
    let (rep, tile) = outer_layout(dc, ds);
    let rep = tape.leaf(rep);
    let tile = tape.leaf(tile);
    let ones_m = tape.leaf(Tensor::filled(&[dc * ds, 1], 1.0));
    let ones_c = tape.leaf(Tensor::filled(&[dc, 1], 1.0));
    let ones_s = tape.leaf(Tensor::filled(&[ds, 1], 1.0));

    let mut acc: Option<(Var, Var, Var)> = None;
    for v in probes {
        let v = tape.leaf(v.clone());
        let g = tape.vjp_graph(output, v, &[content, style])?;
        let (a, b) = (g[0], g[1]);
        let br = tape.matmul(b, rep, false, false)?;
        let at = tape.matmul(a, tile, false, false)?;
        let outer = tape.mul(br, at)?;
        let a2 = tape.mul(a, a)?;
        let na = tape.matmul(a2, ones_c, false, false)?;
        let b2 = tape.mul(b, b)?;
        let nb = tape.matmul(b2, ones_s, false, false)?;
        acc = Some(match acc {
            None => (outer, na, nb),
            Some((s, pa, pb)) => (tape.add(s, outer)?, tape.add(pa, na)?, tape.add(pb, nb)?),
        });
    }
    let (s, na, nb) = acc.expect("at least one probe");
    let s2 = tape.mul(s, s)?;
    let num = tape.matmul(s2, ones_m, false, false)?;
    let prod = tape.mul(na, nb)?;
    // Each running sum still lacks its 1/K.
    let den = tape.affine1(prod, 1.0 / (k * k), eps)?;
    let num = tape.scale(num, 1.0 / (k * k))?;
    let inv = tape.recip(den)?;
    let ratio = tape.mul(num, inv)?;
    Ok(tape.mean(ratio)?)
}

/// Probe estimate at latent points `(c, s)` of a decoder, averaged over rows.
/// Fresh probes are drawn per row (shared by its content and style products).
pub fn orth_loss_probe<D: LatentDecoder + ?Sized, R: Rng + ?Sized>(
    decoder: &D,
    c: &Tensor,
    s: &Tensor,
    probes_k: usize,
    kind: ProbeKind,
    eps: f64,
    rng: &mut R,
) -> Result<f64, ObjectiveError> {
    if probes_k == 0 {
        return Err(ObjectiveError::NoProbes(0));
    }
    let mut tape = Tape::new();
    let cv = tape.leaf(c.clone());
    let sv = tape.leaf(s.clone());
    let x = decoder.decode_on_tape(&mut tape, cv, sv)?;
    let probes = draw_probes(kind, probes_k, c.rows(), decoder.output_dim(), rng);
    let v = orth_loss_probe_on_tape(&mut tape, x, cv, sv, &probes, eps)?;
    Ok(tape.value(v).item())
}

/// Matrix form of the probe estimator for explicit blocks, with probes as
/// the rows of `probes` (`[K, d]`).
pub fn orth_probe_from_blocks(
    jc: &Tensor,
    js: &Tensor,
    probes: &Tensor,
    eps: f64,
) -> Result<f64, ObjectiveError> {
    let (d, dc, ds) = (jc.shape()[0], jc.shape()[1], js.shape()[1]);
    if probes.cols() != d || probes.rows() == 0 {
        return Err(ObjectiveError::Dimension(format!(
            "probes {:?} do not match output dimension {d}",
            probes.shape()
        )));
    }
    let k = probes.rows() as f64;
    let mut m = vec![0.0; ds * dc];
    let (mut na, mut nb) = (0.0, 0.0);
    for r in 0..probes.rows() {
        let v = probes.row(r);
        let a: Vec<f64> = (0..dc)
            .map(|q| (0..d).map(|i| jc.get(i, q) * v[i]).sum())
            .collect();
        let b: Vec<f64> = (0..ds)
            .map(|p| (0..d).map(|i| js.get(i, p) * v[i]).sum())
            .collect();
        for p in 0..ds {
            for q in 0..dc {
                m[p * dc + q] += b[p] * a[q];
            }
        }
        na += a.iter().map(|x| x * x).sum::<f64>();
        nb += b.iter().map(|x| x * x).sum::<f64>();
    }
    let num: f64 = m.iter().map(|x| (x / k) * (x / k)).sum();
    Ok(num / ((na / k) * (nb / k) + eps))
}

/// Exact loss at every row of `(c, s)`, from full Jacobians.
pub fn orth_exact_per_point<D: LatentDecoder + ?Sized>(
    decoder: &D,
    c: &Tensor,
    s: &Tensor,
    eps: f64,
) -> Result<Vec<f64>, ObjectiveError> {
    exact_jacobian_pairs(decoder, c, s)?
        .iter()
        .map(|p| orth_loss_exact(&p.jc, &p.js, eps))
        .collect()
}
