use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::extract::pairs_on_tape;
use super::JacobianError;
use crate::autodiff::Tape;
use crate::model::{gaussian_tensor, ArchConfig, DimensionPlan, LatentDecoder, ModelBundle};
use crate::objective::{draw_probes, ProbeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    Exact,
    Probe,
}

/// Per-sample cost of one evaluation of the orthogonality term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostAudit {
    pub mode: CostMode,
    pub backward_passes: usize,
    /// Largest number of Jacobian-derived floats held at once.
    pub peak_jacobian_floats: usize,
}

/// Closed-form counts: `d` passes and `d·(d_c + d_s)` floats in exact mode;
/// `K` passes and `d + d_s·d_c` floats in probe mode.
pub fn cost_formula(mode: CostMode, plan: &DimensionPlan, probes_k: usize) -> CostAudit {
    let (d, dc, ds) = (plan.d, plan.d_c, plan.d_s);
    match mode {
        CostMode::Exact => CostAudit {
            mode,
            backward_passes: d,
            peak_jacobian_floats: d * (dc + ds),
        },
        CostMode::Probe => CostAudit {
            mode,
            backward_passes: probes_k,
            peak_jacobian_floats: d + ds * dc,
        },
    }
}

/// Runs each code path once on a freshly initialized generator for a single
/// latent point and reports what it actually did: reverse passes from the
/// tape counter and the Jacobian-derived buffers it kept alive.
pub fn cost_audit(
    mode: CostMode,
    plan: &DimensionPlan,
    probes_k: usize,
) -> Result<CostAudit, JacobianError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC057);
    let arch = ArchConfig {
        latent_width: 4,
        latent_layers: 1,
        gen_width: 8,
        gen_hidden: 1,
        disc_width: 4,
        disc_hidden: 1,
    };
    let bundle = ModelBundle::init(*plan, arch, &mut rng)?;
    let c = gaussian_tensor(&[1, plan.d_c], &mut rng);
    let s = gaussian_tensor(&[1, plan.d_s], &mut rng);
    match mode {
        CostMode::Exact => {
            let mut tape = Tape::new();
            let cv = tape.leaf(c);
            let sv = tape.leaf(s);
            let x = bundle.decode_on_tape(&mut tape, cv, sv)?;
            let before = tape.backward_passes();
            let pairs = pairs_on_tape(&tape, x, cv, sv)?;
            Ok(CostAudit {
                mode,
                backward_passes: tape.backward_passes() - before,
                peak_jacobian_floats: pairs.iter().map(|p| p.jc.len() + p.js.len()).sum(),
            })
        }
        CostMode::Probe => {
            let mut tape = Tape::new();
            let cv = tape.leaf(c);
            let sv = tape.leaf(s);
            let x = bundle.decode_on_tape(&mut tape, cv, sv)?;
            let before = tape.backward_passes();
            let mut acc = vec![0.0; plan.d_s * plan.d_c];
            let mut peak = 0;
            for v in draw_probes(ProbeKind::Gaussian, probes_k, 1, plan.d, &mut rng) {
                let g = tape.vjp(x, &v, &[cv, sv])?;
                let (a, b) = (g[0].data(), g[1].data());
                for p in 0..plan.d_s {
                    for q in 0..plan.d_c {
                        acc[p * plan.d_c + q] += b[p] * a[q];
                    }
                }
                // The probe and the running outer product persist; the two
                // products are folded in immediately.
                peak = peak.max(v.len() + acc.len());
            }
            Ok(CostAudit {
                mode,
                backward_passes: tape.backward_passes() - before,
                peak_jacobian_floats: peak,
            })
        }
    }
}
