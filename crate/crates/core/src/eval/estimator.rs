use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Tensor;
use crate::jacobian::JacobianPair;
use crate::objective::{draw_probes, orth_loss_exact, orth_probe_from_blocks, ProbeKind};

/// Relative-error distribution of the probe estimator for one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub probe_kind: ProbeKind,
    /// Requested probe count; basis enumeration always uses `d`.
    pub probes: usize,
    pub samples: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

/// Nearest-rank quantile of an unsorted sample.
pub(crate) fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

/// For every `(kind, K)` and every pair, `trials` independent probe sets;
/// errors are `|probe − exact| / exact` with the same `eps`. Pairs whose
/// exact loss is zero are scored by absolute error instead.
pub fn estimator_error_study(
    pairs: &[JacobianPair],
    probe_counts: &[usize],
    kinds: &[ProbeKind],
    trials: usize,
    eps: f64,
    seed: u64,
) -> Result<Vec<EstimatorRow>, EvalError> {
    let exact = pairs
        .iter()
        .map(|p| orth_loss_exact(&p.jc, &p.js, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &kind in kinds {
        for &k in probe_counts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut errs = Vec::with_capacity(pairs.len() * trials);
            for (pair, &truth) in pairs.iter().zip(&exact) {
                let d = pair.output_dim();
                for _ in 0..trials.max(1) {
                    let probes = draw_probes(kind, k, 1, d, &mut rng);
                    let stacked = Tensor::vstack(&probes.iter().collect::<Vec<_>>())?;
                    let est = orth_probe_from_blocks(&pair.jc, &pair.js, &stacked, eps)?;
                    let err = (est - truth).abs();
                    errs.push(if truth > 0.0 { err / truth } else { err });
                }
            }
            let n = errs.len();
            rows.push(EstimatorRow {
                probe_kind: kind,
                probes: k,
                samples: n,
                median: quantile(&mut errs, 0.5),
                p90: quantile(&mut errs, 0.9),
                max: errs.last().copied().unwrap_or(0.0),
            });
        }
    }
    Ok(rows)
}
