use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::disentangle::{disentanglement_report, EvalConfig, MmdReference};
use super::EvalError;
use crate::model::ModelBundle;
use crate::objective::{orth_exact_per_point, orth_loss_probe};
use crate::train::{train, ExperimentConfig};
use crate::world::WorldSpec;

/// Latent points used for the final orthogonality audit of a run.
const AUDIT_POINTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "lambda_inv")]
    LambdaInv,
    #[serde(rename = "lambda_orth")]
    LambdaOrth,
    #[serde(rename = "probes_K")]
    ProbesK,
    #[serde(rename = "eps")]
    Eps,
}

impl FromStr for SweepParam {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda_inv" => Ok(SweepParam::LambdaInv),
            "lambda_orth" => Ok(SweepParam::LambdaOrth),
            "probes_K" | "probes_k" => Ok(SweepParam::ProbesK),
            "eps" => Ok(SweepParam::Eps),
            other => Err(EvalError::UnknownParam(other.into())),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::LambdaInv => "lambda_inv",
            SweepParam::LambdaOrth => "lambda_orth",
            SweepParam::ProbesK => "probes_K",
            SweepParam::Eps => "eps",
        })
    }
}

impl SweepParam {
    /// A copy of `base` with only this field changed.
    pub fn apply(
        &self,
        base: &ExperimentConfig,
        value: f64,
    ) -> Result<ExperimentConfig, EvalError> {
        let mut cfg = base.clone();
        let w = &mut cfg.weights;
        match self {
            SweepParam::LambdaInv => w.lambda_inv = value,
            SweepParam::LambdaOrth => w.lambda_orth = value,
            SweepParam::Eps => w.eps = value,
            SweepParam::ProbesK => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(EvalError::Dimension(format!(
                        "probe count {value} is not a positive integer"
                    )));
                }
                w.probes = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything measured on one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub config_hash: String,
    /// Squared MMD per domain after training and at initialization.
    pub mmd: Vec<f64>,
    pub mmd_init: Vec<f64>,
    pub r2_content: f64,
    pub r2_style: f64,
    pub r2_style_per_domain: Vec<f64>,
    pub unreliable: bool,
    /// Mean exact orthogonality loss of the trained generator.
    pub orth_exact_mean: f64,
    /// Mean `|probe − exact| / exact` at the run's probe setting.
    pub probe_rel_error: f64,
    pub final_gan: f64,
}

/// Trains one configuration on `world` and evaluates the result against
/// `reference`. Returns `None` when training halted on divergence.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    world: &WorldSpec,
    reference: &MmdReference,
    eval: &EvalConfig,
) -> Result<Option<(RunMetrics, ModelBundle)>, EvalError> {
    let out = train(cfg, world, None, None)?;
    if let Some(h) = &out.halted {
        log::warn!(
            "run with seed {} halted at iteration {}",
            cfg.seed,
            h.iteration
        );
        return Ok(None);
    }
    let bundle = out.bundle;
    let init = ModelBundle::init(cfg.plan, cfg.arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let report = disentanglement_report(&bundle, world, eval)?;
    let mmd = reference.score(&bundle, eval.seed)?;
    let mmd_init = reference.score(&init, eval.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(eval.seed ^ 0x0A7D);
    let batches = (0..cfg.plan.domains)
        .map(|n| {
            crate::model::LatentBatch::sample(
                &cfg.plan,
                AUDIT_POINTS / cfg.plan.domains,
                n,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut exact_sum = 0.0;
    let mut errors = Vec::new();
    let w = &cfg.weights;
    for b in &batches {
        let (c, s, _) = bundle.generate_batch(b)?;
        let exact = orth_exact_per_point(&bundle, &c, &s, w.eps)?;
        for (i, &e) in exact.iter().enumerate() {
            let (ci, si) = (c.select_rows(&[i]), s.select_rows(&[i]));
            let p = orth_loss_probe(&bundle, &ci, &si, w.probes, w.probe_kind, w.eps, &mut rng)?;
            exact_sum += e;
            errors.push(if e > 0.0 {
                (p - e).abs() / e
            } else {
                (p - e).abs()
            });
        }
    }
    let metrics = RunMetrics {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        mmd,
        mmd_init,
        r2_content: report.r2_content,
        r2_style: report.r2_style_mean,
        r2_style_per_domain: report.r2_style_per_domain,
        unreliable: report.unreliable,
        orth_exact_mean: exact_sum / errors.len() as f64,
        probe_rel_error: errors.iter().sum::<f64>() / errors.len() as f64,
        final_gan: out.log.last().map_or(f64::NAN, |r| r.gan_total),
    };
    Ok(Some((metrics, bundle)))
}

/// One swept value with its runs and median metrics; halted runs are
/// counted in `missing` and excluded from the medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub runs: Vec<RunMetrics>,
    pub missing: usize,
    pub mmd: f64,
    pub r2_content: f64,
    pub r2_style: f64,
    pub orth_exact_mean: f64,
    pub probe_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub swept_param: SweepParam,
    pub values: Vec<f64>,
    pub base_config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn csv_header() -> [&'static str; 9] {
        [
            "param",
            "value",
            "runs",
            "missing",
            "mmd",
            "r2_content",
            "r2_style",
            "orth_exact_mean",
            "probe_rel_error",
        ]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header())?;
        for r in &self.rows {
            w.write_record([
                self.swept_param.to_string(),
                r.value.to_string(),
                r.runs.len().to_string(),
                r.missing.to_string(),
                r.mmd.to_string(),
                r.r2_content.to_string(),
                r.r2_style.to_string(),
                r.orth_exact_mean.to_string(),
                r.probe_rel_error.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains one model per `(value, repeat)` with seeds `base.seed + repeat`,
/// holding every other field fixed, and aggregates medians per value. At
/// most `jobs` runs execute at once; results do not depend on `jobs`.
pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    repeats: usize,
    world: &WorldSpec,
    eval: &EvalConfig,
    jobs: usize,
) -> Result<SweepResult, EvalError> {
    let reference = MmdReference::draw(world, eval.samples, eval.seed.wrapping_add(1))?;
    let mut tasks = Vec::new();
    for (vi, &v) in values.iter().enumerate() {
        let cfg = param.apply(base, v)?;
        for r in 0..repeats.max(1) {
            let mut c = cfg.clone();
            c.seed = base.seed.wrapping_add(r as u64);
            tasks.push((vi, c));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Option<RunMetrics>, EvalError>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, cfg)) = tasks.get(i) else { break };
                let r = evaluate_run(cfg, world, &reference, eval).map(|o| o.map(|(m, _)| m));
                results.lock().expect("no poisoned runs")[i] = Some(r);
            });
        }
    });
    let mut per_value: Vec<(Vec<RunMetrics>, usize)> = vec![(Vec::new(), 0); values.len()];
    for ((vi, _), r) in tasks
        .iter()
        .zip(results.into_inner().expect("no poisoned runs"))
    {
        match r.expect("every task ran")? {
            Some(m) => per_value[*vi].0.push(m),
            None => per_value[*vi].1 += 1,
        }
    }
    let rows = values
        .iter()
        .zip(per_value)
        .map(|(&value, (runs, missing))| {
            let pick = |f: fn(&RunMetrics) -> f64| median(runs.iter().map(f).collect());
            SweepRow {
                value,
                mmd: pick(|m| m.mmd.iter().sum::<f64>() / m.mmd.len() as f64),
                r2_content: pick(|m| m.r2_content),
                r2_style: pick(|m| m.r2_style),
                orth_exact_mean: pick(|m| m.orth_exact_mean),
                probe_rel_error: pick(|m| m.probe_rel_error),
                missing,
                runs,
            }
        })
        .collect();
    Ok(SweepResult {
        swept_param: param,
        values: values.to_vec(),
        base_config_hash: base.hash(),
        rows,
    })
}
