use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(rename = "eps_opt")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, allocated lazily on the first applied step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    /// Steps refused because a gradient was not finite.
    pub skipped: u64,
}

/// One bias-corrected Adam update. Returns `false` (and leaves parameters
/// and moments untouched) when any gradient entry is not finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> bool {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    for (p, g) in params.iter().zip(grads) {
        assert_eq!(p.shape(), g.shape(), "gradient shape must match parameter");
    }
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!(
            "non-finite gradient; skipping optimizer step ({} skipped so far)",
            state.skipped
        );
        return false;
    }
    if state.first_moment.is_empty() {
        state.first_moment = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.second_moment = state.first_moment.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first_moment[k].data_mut();
        let v = state.second_moment[k].data_mut();
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    true
}
