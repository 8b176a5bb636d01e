use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gan::{disc_value_on_tape, generator_adv_on_tape};
use super::inv::inv_loss_on_tape;
use super::orth::{draw_probes, orth_exact_per_point, orth_loss_probe_on_tape, ProbeKind};
use super::ObjectiveError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::model::{BoundBundle, Generated, LatentBatch, ModelBundle, ParamGroup};

/// Weights and estimator settings of the full objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_inv: f64,
    pub lambda_orth: f64,
    pub eps: f64,
    pub probes: usize,
    pub probe_kind: ProbeKind,
    /// Rows per domain batch that enter the orthogonality term; `None`
    /// uses the whole batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orth_rows: Option<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_inv: 1e-3,
            lambda_orth: 1.0,
            eps: 1e-8,
            probes: 8,
            probe_kind: ProbeKind::Gaussian,
            orth_rows: None,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.lambda_inv >= 0.0 && self.lambda_orth >= 0.0) {
            return Err(ObjectiveError::Weights(
                "loss weights must be non-negative".into(),
            ));
        }
        if !(self.eps > 0.0) {
            return Err(ObjectiveError::Weights("eps must be positive".into()));
        }
        if self.probes == 0 {
            return Err(ObjectiveError::NoProbes(0));
        }
        if self.orth_rows == Some(0) {
            return Err(ObjectiveError::Weights("orth_rows must be positive".into()));
        }
        Ok(())
    }
}

/// Tape handles of one generator-side objective evaluation.
#[derive(Clone, Debug)]
pub struct GeneratorTerms {
    /// What the generator side minimizes: non-saturating adversarial term
    /// plus weighted invertibility and orthogonality terms.
    pub objective: Var,
    /// Minimax adversarial value per domain.
    pub gan_per_domain: Vec<Var>,
    pub inv: Var,
    pub orth: Var,
    pub generated: Vec<Generated>,
}

/// Records the generator-side objective for one step.
///
/// `real[n]` and `seeds[n]` are the batches for domain `n`. The
/// orthogonality term draws fresh probes from `rng`, shared by the content
/// and style products of each row.
pub fn generator_objective_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &BoundBundle,
    real: &[Tensor],
    seeds: &[LatentBatch],
    weights: &LossWeights,
    rng: &mut R,
) -> Result<GeneratorTerms, ObjectiveError> {
    weights.validate()?;
    if real.len() != seeds.len() {
        return Err(ObjectiveError::Dimension(format!(
            "{} real batches for {} latent batches",
            real.len(),
            seeds.len()
        )));
    }
    let mut generated = Vec::with_capacity(seeds.len());
    let mut gan_per_domain = Vec::with_capacity(seeds.len());
    let mut adv: Option<Var> = None;
    let mut orth: Option<Var> = None;
    for (x_real, batch) in real.iter().zip(seeds) {
        let n = batch.domain;
        let g = bound.generate(tape, batch)?;
        generated.push(g);
        let fake_logits = bound.disc_logits(tape, g.sample, n)?;
        let xr = tape.leaf(x_real.clone());
        let real_logits = bound.disc_logits(tape, xr, n)?;
        gan_per_domain.push(disc_value_on_tape(tape, real_logits, fake_logits)?);
        let a = generator_adv_on_tape(tape, fake_logits)?;
        adv = Some(match adv {
            Some(t) => tape.add(t, a)?,
            None => a,
        });

        if weights.lambda_orth > 0.0 {
            let rows = weights
                .orth_rows
                .map_or(batch.len(), |m| m.min(batch.len()));
            let (c, s, x) = if rows == batch.len() {
                (g.content, g.style, g.sample)
            } else {
                // Re-run the generator on the leading rows so that the
                // reverse passes only traverse the sub-batch.
                let c = tape.slice_rows(g.content, 0, rows)?;
                let s = tape.slice_rows(g.style, 0, rows)?;
                (c, s, bound.decode(tape, c, s)?)
            };
            let d = tape.value(x).cols();
            let probes = draw_probes(weights.probe_kind, weights.probes, rows, d, rng);
            let o = orth_loss_probe_on_tape(tape, x, c, s, &probes, weights.eps)?;
            orth = Some(match orth {
                Some(t) => tape.add(t, o)?,
                None => o,
            });
        }
    }
    let domains = seeds.len().max(1) as f64;
    let adv = adv.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)));
    let orth = match orth {
        Some(o) => tape.scale(o, 1.0 / domains)?,
        None => tape.leaf(Tensor::scalar(0.0)),
    };
    let pairs: Vec<(&LatentBatch, Generated)> =
        seeds.iter().zip(generated.iter().copied()).collect();
    let inv = inv_loss_on_tape(tape, bound, &pairs)?;
    let wi = tape.scale(inv, weights.lambda_inv)?;
    let wo = tape.scale(orth, weights.lambda_orth)?;
    let objective = tape.add(adv, wi)?;
    let objective = tape.add(objective, wo)?;
    Ok(GeneratorTerms {
        objective,
        gan_per_domain,
        inv,
        orth,
        generated,
    })
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iter: u64,
    pub gan_per_domain: Vec<f64>,
    pub gan_total: f64,
    pub inv: f64,
    pub orth: f64,
    pub orth_exact: Option<f64>,
    /// `gan_total + λ_inv·inv + λ_orth·orth`.
    pub total: f64,
    pub grad_norm_gen: f64,
    pub grad_norm_disc: f64,
}

impl LossReport {
    pub fn csv_header(domains: usize) -> Vec<String> {
        let mut h = vec!["iter".to_string(), "gan_total".to_string()];
        h.extend((0..domains).map(|n| format!("gan_domain{n}")));
        h.extend(
            [
                "inv",
                "orth",
                "orth_exact",
                "total",
                "grad_norm_gen",
                "grad_norm_disc",
            ]
            .map(String::from),
        );
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![self.iter.to_string(), self.gan_total.to_string()];
        r.extend(self.gan_per_domain.iter().map(f64::to_string));
        r.push(self.inv.to_string());
        r.push(self.orth.to_string());
        r.push(self.orth_exact.map(|v| v.to_string()).unwrap_or_default());
        r.push(self.total.to_string());
        r.push(self.grad_norm_gen.to_string());
        r.push(self.grad_norm_disc.to_string());
        r
    }

    /// Writes reports as CSV with a header row.
    pub fn write_csv<W: Write>(reports: &[LossReport], domains: usize, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(domains))?;
        for r in reports {
            w.write_record(r.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }
}

fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

/// Evaluates the full objective without updating anything. With `oracle`
/// the exact orthogonality loss is co-evaluated at the same latent points.
pub fn total_loss<R: Rng + ?Sized>(
    bundle: &ModelBundle,
    real: &[Tensor],
    seeds: &[LatentBatch],
    weights: &LossWeights,
    oracle: bool,
    rng: &mut R,
) -> Result<LossReport, ObjectiveError> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let terms = generator_objective_on_tape(&mut tape, &bound, real, seeds, weights, rng)?;
    let gen_grads = tape.grad(terms.objective, &bound.vars(ParamGroup::Generator))?;
    let mut disc_sum = terms.gan_per_domain[0];
    for &v in &terms.gan_per_domain[1..] {
        disc_sum = tape.add(disc_sum, v)?;
    }
    let disc_grads = tape.grad(disc_sum, &bound.vars(ParamGroup::Discriminator))?;
    let orth_exact = if oracle {
        Some(oracle_orth(bundle, &tape, &terms, weights)?)
    } else {
        None
    };
    Ok(report_from_terms(
        0,
        &tape,
        &terms,
        weights,
        orth_exact,
        &gen_grads,
        &disc_grads,
    ))
}

/// Mean exact orthogonality loss over the rows that entered the probe term.
pub fn oracle_orth(
    bundle: &ModelBundle,
    tape: &Tape,
    terms: &GeneratorTerms,
    weights: &LossWeights,
) -> Result<f64, ObjectiveError> {
    let mut total = 0.0;
    for g in &terms.generated {
        let c = tape.value(g.content);
        let rows = weights.orth_rows.map_or(c.rows(), |m| m.min(c.rows()));
        let idx: Vec<usize> = (0..rows).collect();
        let c = c.select_rows(&idx);
        let s = tape.value(g.style).select_rows(&idx);
        let vals = orth_exact_per_point(bundle, &c, &s, weights.eps)?;
        total += vals.iter().sum::<f64>() / rows as f64;
    }
    Ok(total / terms.generated.len().max(1) as f64)
}

pub(crate) fn report_from_terms(
    iter: u64,
    tape: &Tape,
    terms: &GeneratorTerms,
    weights: &LossWeights,
    orth_exact: Option<f64>,
    gen_grads: &[Tensor],
    disc_grads: &[Tensor],
) -> LossReport {
    let gan_per_domain: Vec<f64> = terms
        .gan_per_domain
        .iter()
        .map(|&v| tape.value(v).item())
        .collect();
    let gan_total: f64 = gan_per_domain.iter().sum();
    let inv = tape.value(terms.inv).item();
    let orth = tape.value(terms.orth).item();
    LossReport {
        iter,
        gan_per_domain,
        gan_total,
        inv,
        orth,
        orth_exact,
        total: gan_total + weights.lambda_inv * inv + weights.lambda_orth * orth,
        grad_norm_gen: global_norm(gen_grads),
        grad_norm_disc: global_norm(disc_grads),
    }
}
