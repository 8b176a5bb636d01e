use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LatentBatch, ModelBundle, ModelError};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::train::{adam_step, AdamConfig, OptimizerState};

/// A map from (content, style) latents to observations that inversion can
/// search over.
pub trait LatentDecoder {
    /// `(d_c, d_s)`.
    fn latent_dims(&self) -> (usize, usize);

    fn output_dim(&self) -> usize;

    fn decode_on_tape(&self, tape: &mut Tape, c: Var, s: Var) -> Result<Var, AutodiffError>;

    /// Starting points for inversion: `[batch, d_c]` and `[batch, d_s]`.
    fn sample_prior(
        &self,
        batch: usize,
        domain: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, Tensor), ModelError>;

    fn decode(&self, c: &Tensor, s: &Tensor) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new();
        let cv = tape.leaf(c.clone());
        let sv = tape.leaf(s.clone());
        let x = self.decode_on_tape(&mut tape, cv, sv)?;
        Ok(tape.value(x).clone())
    }
}

impl LatentDecoder for ModelBundle {
    fn latent_dims(&self) -> (usize, usize) {
        (self.plan.d_c, self.plan.d_s)
    }

    fn output_dim(&self) -> usize {
        self.plan.d
    }

    fn decode_on_tape(&self, tape: &mut Tape, c: Var, s: Var) -> Result<Var, AutodiffError> {
        let gen = self.generator.bind(tape);
        let z = tape.concat(c, s)?;
        gen.forward(tape, z)
    }

    /// Encoded prior draws `(e_c(r_c), e_s(r_s))`.
    fn sample_prior(
        &self,
        batch: usize,
        domain: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, Tensor), ModelError> {
        let seeds = LatentBatch::sample(&self.plan, batch, domain, rng)?;
        let (c, s, _) = self.generate_batch(&seeds)?;
        Ok((c, s))
    }
}

/// Latent search settings. Divergence is squared error in data space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-2,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    pub content: Tensor,
    pub style: Tensor,
    /// Best per-row divergence `‖decode(c, s) − x‖²`.
    pub divergence: Vec<f64>,
    /// Mean divergence per step, one trace per restart.
    pub traces: Vec<Vec<f64>>,
}

fn row_divergence(tape: &Tape, residual: Var) -> Vec<f64> {
    let r = tape.value(residual);
    (0..r.rows())
        .map(|i| r.row(i).iter().map(|v| v * v).sum())
        .collect()
}

/// Per-row argmin of `‖decode(c, s) − x‖²` by Adam over `(c, s)`.
///
/// The first restart starts from `init` when given; further restarts draw
/// from the decoder's prior for `domain`. With `steps == 0` and an explicit
/// `init`, the init is returned unchanged.
pub fn invert_sample<D: LatentDecoder + ?Sized>(
    decoder: &D,
    x_target: &Tensor,
    domain: usize,
    init: Option<(&Tensor, &Tensor)>,
    cfg: &InversionConfig,
) -> Result<InversionResult, ModelError> {
    let (d_c, d_s) = decoder.latent_dims();
    if x_target.shape().len() != 2 || x_target.cols() != decoder.output_dim() {
        return Err(ModelError::Dimension {
            what: "inversion target",
            expected: decoder.output_dim(),
            found: x_target.cols(),
        });
    }
    let rows = x_target.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let restarts = match init {
        Some(_) if cfg.steps == 0 => 1,
        _ => cfg.restarts.max(1),
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    let mut best_c = Tensor::zeros(&[rows, d_c]);
    let mut best_s = Tensor::zeros(&[rows, d_s]);
    let mut best = vec![f64::INFINITY; rows];
    let mut traces = Vec::with_capacity(restarts);

    for restart in 0..restarts {
        let (mut c, mut s) = match (restart, init) {
            (0, Some((c0, s0))) => {
                if c0.shape() != [rows, d_c] || s0.shape() != [rows, d_s] {
                    return Err(ModelError::Dimension {
                        what: "inversion init",
                        expected: rows * (d_c + d_s),
                        found: c0.len() + s0.len(),
                    });
                }
                (c0.clone(), s0.clone())
            }
            _ => decoder.sample_prior(rows, domain, &mut rng)?,
        };
        let mut state = OptimizerState::default();
        let mut trace = Vec::with_capacity(cfg.steps + 1);
        for step in 0..=cfg.steps {
            let mut tape = Tape::new();
            let cv = tape.leaf(c.clone());
            let sv = tape.leaf(s.clone());
            let xv = tape.leaf(x_target.clone());
            let y = decoder.decode_on_tape(&mut tape, cv, sv)?;
            let r = tape.sub(y, xv)?;
            let div = row_divergence(&tape, r);
            let mean = div.iter().sum::<f64>() / rows.max(1) as f64;
            trace.push(mean);
            if !mean.is_finite() {
                return Err(ModelError::InversionDiverged { step, trace });
            }
            for i in 0..rows {
                if div[i] < best[i] {
                    best[i] = div[i];
                    best_c.data_mut()[i * d_c..(i + 1) * d_c].copy_from_slice(c.row(i));
                    best_s.data_mut()[i * d_s..(i + 1) * d_s].copy_from_slice(s.row(i));
                }
            }
            if step == cfg.steps {
                break;
            }
            let loss = tape.squared_norm(r)?;
            let grads = tape.grad(loss, &[cv, sv])?;
            adam_step(&mut [&mut c, &mut s], &grads, &mut state, &adam);
        }
        traces.push(trace);
    }
    Ok(InversionResult {
        content: best_c,
        style: best_s,
        divergence: best,
        traces,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub output: Tensor,
    pub source: InversionResult,
    pub style_ref: InversionResult,
}

/// Content of `x_source` rendered with the style of `x_style_ref`: both are
/// inverted, then decoded as `(ĉ_source, ŝ_ref)`.
pub fn translate<D: LatentDecoder + ?Sized>(
    decoder: &D,
    x_source: &Tensor,
    source_domain: usize,
    x_style_ref: &Tensor,
    target_domain: usize,
    cfg: &InversionConfig,
) -> Result<Translation, ModelError> {
    if x_source.rows() != x_style_ref.rows() {
        return Err(ModelError::Dimension {
            what: "style reference rows",
            expected: x_source.rows(),
            found: x_style_ref.rows(),
        });
    }
    let source = invert_sample(decoder, x_source, source_domain, None, cfg)?;
    let style_cfg = InversionConfig {
        seed: cfg.seed.wrapping_add(1),
        ..*cfg
    };
    let style_ref = invert_sample(decoder, x_style_ref, target_domain, None, &style_cfg)?;
    let output = decoder.decode(&source.content, &style_ref.style)?;
    Ok(Translation {
        output,
        source,
        style_ref,
    })
}
