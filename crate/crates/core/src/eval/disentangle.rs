use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::r2::{fit_r2, Regressor};
use super::EvalError;
use crate::autodiff::Tensor;
use crate::model::{DimensionPlan, LatentBatch, ModelBundle};
use crate::train::{median_bandwidth, mmd, Bandwidth, DomainSource};
use crate::world::{sample_world, WorldSpec};

/// Anything that generates observations together with the latents it used.
pub trait GenerativeModel {
    fn plan(&self) -> DimensionPlan;

    /// `(ĉ, ŝ, x̂)` for `n` fresh draws of one domain.
    fn sample_with_latents(
        &self,
        n: usize,
        domain: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tensor, Tensor), EvalError>;
}

impl GenerativeModel for ModelBundle {
    fn plan(&self) -> DimensionPlan {
        self.plan
    }

    fn sample_with_latents(
        &self,
        n: usize,
        domain: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tensor, Tensor), EvalError> {
        let batch = LatentBatch::sample(&self.plan, n, domain, rng)?;
        Ok(self.generate_batch(&batch)?)
    }
}

/// A world evaluated against itself: its latents are the truth.
impl GenerativeModel for WorldSpec {
    fn plan(&self) -> DimensionPlan {
        self.plan
    }

    fn sample_with_latents(
        &self,
        n: usize,
        domain: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Tensor, Tensor), EvalError> {
        let s = sample_world(self, n, domain, rng)?;
        Ok((s.c, s.s, s.x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Generated samples per domain.
    pub samples: usize,
    pub regressor: Regressor,
    pub split_seed: u64,
    pub seed: u64,
    /// Reports with a larger fraction of failed ground-truth recoveries are
    /// flagged unreliable.
    pub max_failure_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            regressor: Regressor::default(),
            split_seed: 0,
            seed: 0,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub r2_content: f64,
    pub r2_content_per_coordinate: Vec<f64>,
    pub r2_style_per_domain: Vec<f64>,
    pub r2_style_mean: f64,
    pub regressor: Regressor,
    pub samples_per_domain: usize,
    /// Rows whose true latents could not be recovered.
    pub failures: usize,
    pub unreliable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Identifiability proxy: regress true content on learned content (all
/// domains pooled) and true style on learned style per domain.
///
/// The model generates `x̂` from latents it reports; the world's analytic
/// inverse recovers the true `(c, s)` that would produce `x̂`, projecting
/// off-manifold samples onto the world's frame first.
pub fn disentanglement_report(
    model: &(impl GenerativeModel + ?Sized),
    world: &WorldSpec,
    cfg: &EvalConfig,
) -> Result<R2Report, EvalError> {
    let plan = model.plan();
    if plan.d != world.plan.d || plan.domains != world.plan.domains {
        return Err(EvalError::Dimension(format!(
            "model ({} domains of dimension {}) does not match world ({} of {})",
            plan.domains, plan.d, world.plan.domains, world.plan.d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut content_pred = Vec::new();
    let mut content_true = Vec::new();
    let mut style_r2 = Vec::with_capacity(plan.domains);
    let mut failures = 0;
    for n in 0..plan.domains {
        let (c_hat, s_hat, x_hat) = model.sample_with_latents(cfg.samples, n, &mut rng)?;
        let mut keep = Vec::with_capacity(cfg.samples);
        let mut c_rows = Vec::new();
        let mut s_rows = Vec::new();
        for i in 0..x_hat.rows() {
            let xi = x_hat.select_rows(&[i]);
            match world.invert(&xi) {
                Ok((c, s)) if c.is_finite() && s.is_finite() => {
                    keep.push(i);
                    c_rows.extend_from_slice(c.data());
                    s_rows.extend_from_slice(s.data());
                }
                _ => failures += 1,
            }
        }
        let c_true = Tensor::matrix(keep.len(), world.plan.d_c, c_rows)?;
        let s_true = Tensor::matrix(keep.len(), world.plan.d_s, s_rows)?;
        let s_pred = s_hat.select_rows(&keep);
        style_r2.push(fit_r2(&s_pred, &s_true, cfg.regressor, cfg.split_seed)?.r2);
        content_pred.push(c_hat.select_rows(&keep));
        content_true.push(c_true);
    }
    let cp = Tensor::vstack(&content_pred.iter().collect::<Vec<_>>())?;
    let ct = Tensor::vstack(&content_true.iter().collect::<Vec<_>>())?;
    let content = fit_r2(&cp, &ct, cfg.regressor, cfg.split_seed)?;
    let total = cfg.samples * plan.domains;
    Ok(R2Report {
        r2_content: content.r2,
        r2_content_per_coordinate: content.per_target,
        r2_style_mean: style_r2.iter().sum::<f64>() / style_r2.len() as f64,
        r2_style_per_domain: style_r2,
        regressor: cfg.regressor,
        samples_per_domain: cfg.samples,
        failures,
        unreliable: failures as f64 > cfg.max_failure_rate * total as f64,
        config_hash: None,
    })
}

/// Held-out real samples per domain and the kernel width fixed from them.
#[derive(Clone, Debug)]
pub struct MmdReference {
    pub real: Vec<Tensor>,
    pub bandwidth: Vec<f64>,
}

impl MmdReference {
    pub fn draw(
        source: &(impl DomainSource + ?Sized),
        n: usize,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = (0..source.domains())
            .map(|k| source.real_batch(k, n, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let bandwidth = real.iter().map(median_bandwidth).collect();
        Ok(Self { real, bandwidth })
    }

    /// Squared MMD between generated and reference samples, per domain.
    pub fn score(
        &self,
        model: &(impl GenerativeModel + ?Sized),
        seed: u64,
    ) -> Result<Vec<f64>, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.real
            .iter()
            .zip(&self.bandwidth)
            .enumerate()
            .map(|(k, (real, &bw))| {
                let (_, _, fake) = model.sample_with_latents(real.rows(), k, &mut rng)?;
                Ok(mmd(&fake, real, Bandwidth::Fixed(bw))?)
            })
            .collect()
    }
}
