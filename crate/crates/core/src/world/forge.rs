use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::model::{sample_latents, DimensionPlan, LatentDecoder, ModelError};

/// Shape of the fixed component maps `u = φ(z·W + b)` with
/// `φ(t) = t + α·tanh(t)`, and of the output frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearityConfig {
    /// Strength of the monotone elementwise bend; 0 keeps the map affine.
    pub alpha: f64,
    /// Draw a well-conditioned random affine map; otherwise the identity.
    pub affine: bool,
    /// Multiplies every observation, keeping data inside a tanh head's range.
    pub out_scale: f64,
    /// Rotate the frames into a random orthonormal basis; otherwise they are
    /// coordinate axes.
    pub rotate_frames: bool,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            affine: true,
            out_scale: 0.25,
            rotate_frames: true,
        }
    }
}

impl NonlinearityConfig {
    /// Both component maps are the identity and the frames are axes, so the
    /// world is the linear map `x = [Qc | Qs]·[c; s]`.
    pub fn identity() -> Self {
        Self {
            alpha: 0.0,
            affine: false,
            out_scale: 1.0,
            rotate_frames: false,
        }
    }
}

/// Domain style law `s = shift + scale·(r_c1, r_s1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleLaw {
    pub shift: Vec<f64>,
    pub scale: f64,
}

/// A fixed generative process `x = out_scale·(Qc·φ(W_cᵀc + b_c) + Qs·φ(W_sᵀs + b_s))`
/// with dependent latents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub plan: DimensionPlan,
    pub xi: f64,
    pub nonlinearity: NonlinearityConfig,
    pub seed: u64,
    /// Orthonormal content frame `[d, d_c]`.
    pub frame_c: Tensor,
    /// Orthonormal style frame `[d, d_s]`, tilted toward the content range.
    pub frame_s: Tensor,
    /// `[d_c, d_c]` in `[in, out]` layout.
    pub weight_c: Tensor,
    pub bias_c: Vec<f64>,
    pub weight_s: Tensor,
    pub bias_s: Vec<f64>,
    pub style_laws: Vec<StyleLaw>,
}

/// Observations with the latents that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSample {
    pub domain: usize,
    pub x: Tensor,
    pub c: Tensor,
    pub s: Tensor,
}

fn dm(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn tensor(m: &DMatrix<f64>) -> Tensor {
    let data = (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect();
    Tensor::matrix(m.nrows(), m.ncols(), data).expect("sized")
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    // Fix column signs so the draw is Haar and reproducible.
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthogonal · diag(σ) · orthogonal with σ in [0.6, 1.4].
fn conditioned_affine(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>) {
    let u = random_orthogonal(n, rng);
    let v = random_orthogonal(n, rng);
    let spread = Uniform::new(0.6, 1.4).expect("valid range");
    let sig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.sample(spread)));
    let b = (0..n)
        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (u * sig * v.transpose(), b)
}

/// Builds a world whose content and style tangent ranges meet at smallest
/// principal angle exactly `π/2 − xi` everywhere: the style frame columns are
/// `cos ξ·u_i + sin ξ·w_i` with `u_i ⊥ range(Qc)` and distinct orthonormal
/// `w_i ∈ range(Qc)`. Style columns beyond `d_c` stay untilted.
pub fn forge_world(
    plan: DimensionPlan,
    xi: f64,
    nonlinearity: NonlinearityConfig,
    seed: u64,
) -> Result<WorldSpec, WorldError> {
    plan.validate()?;
    if !(0.0..FRAC_PI_2).contains(&xi) {
        return Err(WorldError::Tilt(xi));
    }
    let nl = nonlinearity;
    if !(nl.alpha >= 0.0 && nl.alpha.is_finite())
        || !(nl.out_scale > 0.0 && nl.out_scale.is_finite())
    {
        return Err(WorldError::Invalid(format!(
            "alpha {} must be non-negative and out_scale {} positive",
            nl.alpha, nl.out_scale
        )));
    }
    let (d, dc, ds) = (plan.d, plan.d_c, plan.d_s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (basis, inner) = if nl.rotate_frames {
        (
            random_orthogonal(d, &mut rng),
            random_orthogonal(dc, &mut rng),
        )
    } else {
        (DMatrix::identity(d, d), DMatrix::identity(dc, dc))
    };
    let qc = basis.columns(0, dc).into_owned();
    let w = &qc * inner;
    let mut qs = basis.columns(dc, ds).into_owned();
    for i in 0..ds.min(dc) {
        let col = qs.column(i) * xi.cos() + w.column(i) * xi.sin();
        qs.set_column(i, &col);
    }

    let (ac, bc, as_, bs) = if nl.affine {
        let (ac, bc) = conditioned_affine(dc, &mut rng);
        let (as_, bs) = conditioned_affine(ds, &mut rng);
        (ac, bc, as_, bs)
    } else {
        (
            DMatrix::identity(dc, dc),
            vec![0.0; dc],
            DMatrix::identity(ds, ds),
            vec![0.0; ds],
        )
    };

    let n = plan.domains;
    let style_laws = (0..n)
        .map(|k| StyleLaw {
            shift: vec![1.5 * (k as f64 - (n as f64 - 1.0) / 2.0); ds],
            scale: if k % 2 == 0 { 1.0 } else { 0.7 },
        })
        .collect();

    Ok(WorldSpec {
        plan,
        xi,
        nonlinearity: nl,
        seed,
        frame_c: tensor(&qc),
        frame_s: tensor(&qs),
        weight_c: tensor(&ac),
        bias_c: bc,
        weight_s: tensor(&as_),
        bias_s: bs,
        style_laws,
    })
}

fn bend(alpha: f64, t: f64) -> f64 {
    t + alpha * t.tanh()
}

/// Solves `u + α·tanh(u) = v`. The root lies in `[v − α, v + α]` and the
/// derivative is in `[1, 1 + α]`, so safeguarded Newton converges quickly.
fn unbend(alpha: f64, v: f64) -> Option<f64> {
    if alpha == 0.0 {
        return Some(v);
    }
    let (mut lo, mut hi) = (v - alpha, v + alpha);
    let mut u = v / (1.0 + alpha);
    for _ in 0..100 {
        let f = bend(alpha, u) - v;
        if f.abs() <= 1e-15 * (1.0 + v.abs()) {
            return Some(u);
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let th = u.tanh();
        let step = u - f / (1.0 + alpha * (1.0 - th * th));
        u = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * (1.0 + v.abs()) {
            return Some(u);
        }
    }
    let f = bend(alpha, u) - v;
    (f.abs() <= 1e-12 * (1.0 + v.abs())).then_some(u)
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        self.plan.validate()?;
        let p = &self.plan;
        let shape_ok = |t: &Tensor, r: usize, c: usize| t.shape() == [r, c] && t.len() == r * c;
        if !shape_ok(&self.frame_c, p.d, p.d_c)
            || !shape_ok(&self.frame_s, p.d, p.d_s)
            || !shape_ok(&self.weight_c, p.d_c, p.d_c)
            || !shape_ok(&self.weight_s, p.d_s, p.d_s)
            || self.bias_c.len() != p.d_c
            || self.bias_s.len() != p.d_s
            || self.style_laws.len() != p.domains
            || self.style_laws.iter().any(|l| l.shift.len() != p.d_s)
        {
            return Err(WorldError::Invalid(
                "parameter shapes do not match the plan".into(),
            ));
        }
        if !(0.0..FRAC_PI_2).contains(&self.xi) {
            return Err(WorldError::Tilt(self.xi));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, WorldError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, WorldError> {
        let w: Self = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json()?).map_err(|e| WorldError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let s = std::fs::read_to_string(path).map_err(|e| WorldError::io(path, e))?;
        Self::from_json(&s)
    }

    /// Draws `batch` true latents for one domain: content `(r_c1, r_c2)` and
    /// style `shift + scale·(r_c1, r_s1)`, dependent through `r_c1`.
    pub fn sample_latents<R: Rng + ?Sized>(
        &self,
        batch: usize,
        domain: usize,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor), WorldError> {
        let (dc, ds) = (self.plan.d_c, self.plan.d_s);
        let law = &self.style_laws[{
            self.plan.check_domain(domain)?;
            domain
        }];
        let seeds = sample_latents(&self.plan, batch, Some(domain), rng)?;
        let mut c = Vec::with_capacity(batch * dc);
        let mut s = Vec::with_capacity(batch * ds);
        for seed in &seeds {
            c.extend(seed.content());
            s.extend(
                seed.style()
                    .iter()
                    .zip(&law.shift)
                    .map(|(r, m)| m + law.scale * r),
            );
        }
        Ok((Tensor::matrix(batch, dc, c)?, Tensor::matrix(batch, ds, s)?))
    }

    fn component(&self, z: &Tensor, w: &Tensor, b: &[f64]) -> DMatrix<f64> {
        let mut u = dm(z) * dm(w);
        for mut row in u.row_iter_mut() {
            for (v, bi) in row.iter_mut().zip(b) {
                *v = bend(self.nonlinearity.alpha, *v + bi);
            }
        }
        u
    }

    /// `g(c, s)` evaluated directly with dense algebra.
    pub fn generate(&self, c: &Tensor, s: &Tensor) -> Result<Tensor, WorldError> {
        let (dc, ds) = (self.plan.d_c, self.plan.d_s);
        if c.cols() != dc || s.cols() != ds || c.rows() != s.rows() {
            return Err(WorldError::Invalid(format!(
                "latents {:?} and {:?} do not match (d_c, d_s) = ({dc}, {ds})",
                c.shape(),
                s.shape()
            )));
        }
        let uc = self.component(c, &self.weight_c, &self.bias_c);
        let us = self.component(s, &self.weight_s, &self.bias_s);
        let x = (uc * dm(&self.frame_c).transpose() + us * dm(&self.frame_s).transpose())
            * self.nonlinearity.out_scale;
        Ok(tensor(&x))
    }

    /// Recovers `(c, s)` from observations in the range of `g`: least-squares
    /// frame coordinates, elementwise inverse bend, inverse affine map.
    pub fn invert(&self, x: &Tensor) -> Result<(Tensor, Tensor), WorldError> {
        let (d, dc, ds) = (self.plan.d, self.plan.d_c, self.plan.d_s);
        if x.cols() != d {
            return Err(WorldError::Invalid(format!(
                "observations {:?} are not {d}-dimensional",
                x.shape()
            )));
        }
        let mut frame = DMatrix::zeros(d, dc + ds);
        frame.columns_mut(0, dc).copy_from(&dm(&self.frame_c));
        frame.columns_mut(dc, ds).copy_from(&dm(&self.frame_s));
        let pinv = frame
            .pseudo_inverse(1e-12)
            .map_err(|e| WorldError::Invalid(e.to_string()))?;
        let coords = dm(x) * pinv.transpose() / self.nonlinearity.out_scale;
        let alpha = self.nonlinearity.alpha;
        let mut pre = coords.clone();
        for (i, v) in pre.iter_mut().enumerate() {
            *v = unbend(alpha, *v).ok_or(WorldError::Inverse {
                coordinate: i,
                residual: f64::NAN,
            })?;
        }
        let undo =
            |block: DMatrix<f64>, w: &Tensor, b: &[f64]| -> Result<DMatrix<f64>, WorldError> {
                let mut z = block;
                for mut row in z.row_iter_mut() {
                    for (v, bi) in row.iter_mut().zip(b) {
                        *v -= bi;
                    }
                }
                let winv = dm(w)
                    .try_inverse()
                    .ok_or_else(|| WorldError::Invalid("component map is singular".into()))?;
                Ok(z * winv)
            };
        let c = undo(
            pre.columns(0, dc).into_owned(),
            &self.weight_c,
            &self.bias_c,
        )?;
        let s = undo(
            pre.columns(dc, ds).into_owned(),
            &self.weight_s,
            &self.bias_s,
        )?;
        Ok((tensor(&c), tensor(&s)))
    }
}

impl LatentDecoder for WorldSpec {
    fn latent_dims(&self) -> (usize, usize) {
        (self.plan.d_c, self.plan.d_s)
    }

    fn output_dim(&self) -> usize {
        self.plan.d
    }

    fn decode_on_tape(&self, tape: &mut Tape, c: Var, s: Var) -> Result<Var, AutodiffError> {
        let alpha = self.nonlinearity.alpha;
        let mut part =
            |z: Var, w: &Tensor, b: &[f64], frame: &Tensor| -> Result<Var, AutodiffError> {
                let w = tape.leaf(w.clone());
                let b = tape.leaf(Tensor::vector(b.to_vec()));
                let pre = tape.affine(z, w, b)?;
                let t = tape.tanh(pre)?;
                let t = tape.scale(t, alpha)?;
                let u = tape.add(pre, t)?;
                let f = tape.leaf(frame.clone());
                tape.matmul(u, f, false, true)
            };
        let xc = part(c, &self.weight_c, &self.bias_c, &self.frame_c)?;
        let xs = part(s, &self.weight_s, &self.bias_s, &self.frame_s)?;
        let x = tape.add(xc, xs)?;
        tape.scale(x, self.nonlinearity.out_scale)
    }

    fn sample_prior(
        &self,
        batch: usize,
        domain: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, Tensor), ModelError> {
        self.sample_latents(batch, domain, rng)
            .map_err(|e| match e {
                WorldError::Model(m) => m,
                other => ModelError::InvalidPlan(other.to_string()),
            })
    }
}

/// Observations of one domain with their true latents.
pub fn sample_world<R: Rng + ?Sized>(
    world: &WorldSpec,
    batch: usize,
    domain: usize,
    rng: &mut R,
) -> Result<WorldSample, WorldError> {
    let (c, s) = world.sample_latents(batch, domain, rng)?;
    let x = world.generate(&c, &s)?;
    Ok(WorldSample { domain, x, c, s })
}
