use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::TrainError;
use crate::autodiff::{Tape, Tensor};
use crate::model::{ArchConfig, Checkpoint, DimensionPlan, LatentBatch, ModelBundle, ParamGroup};
use crate::objective::{
    disc_value_on_tape, generator_objective_on_tape, oracle_orth, LossReport, LossWeights,
};
use crate::world::{sample_world, DomainData, WorldSpec};

/// Losses beyond this magnitude halt the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn one() -> usize {
    1
}

fn default_batch() -> usize {
    64
}

fn default_audit() -> u64 {
    1000
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plan: DimensionPlan,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub iters: u64,
    #[serde(default = "one")]
    pub disc_steps_per_gen: usize,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint period in iterations.
    #[serde(default = "default_audit")]
    pub audit_every: u64,
    /// Co-evaluate the exact orthogonality loss at every generator step.
    #[serde(default)]
    pub oracle_mode: bool,
    /// Linear ramp of the orthogonality weight over this many iterations;
    /// 0 applies the full weight from the start.
    #[serde(default)]
    pub orth_warmup: u64,
}

impl ExperimentConfig {
    pub fn new(plan: DimensionPlan, iters: u64, seed: u64) -> Self {
        Self {
            plan,
            arch: ArchConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            batch: default_batch(),
            iters,
            disc_steps_per_gen: 1,
            seed,
            audit_every: default_audit(),
            oracle_mode: false,
            orth_warmup: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        self.plan.validate()?;
        self.weights
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", a.lr));
        }
        for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !(a.eps > 0.0) {
            return bad("optimizer eps must be positive".into());
        }
        if self.batch < 2 {
            return bad(format!("batch {} must be at least 2", self.batch));
        }
        if self.disc_steps_per_gen == 0 {
            return bad("disc_steps_per_gen must be at least 1".into());
        }
        if self.audit_every == 0 {
            return bad("audit_every must be at least 1".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Where real per-domain batches come from.
pub trait DomainSource {
    fn domains(&self) -> usize;
    fn dim(&self) -> usize;
    fn real_batch(
        &self,
        domain: usize,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, TrainError>;
}

impl DomainSource for WorldSpec {
    fn domains(&self) -> usize {
        self.plan.domains
    }

    fn dim(&self) -> usize {
        self.plan.d
    }

    fn real_batch(
        &self,
        domain: usize,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, TrainError> {
        Ok(sample_world(self, batch, domain, rng)
            .map_err(|e| TrainError::Data(e.to_string()))?
            .x)
    }
}

/// A built dataset; batches are drawn with replacement.
impl DomainSource for [DomainData] {
    fn domains(&self) -> usize {
        self.len()
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, |d| d.x.cols())
    }

    fn real_batch(
        &self,
        domain: usize,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor, TrainError> {
        let data = self
            .get(domain)
            .ok_or_else(|| TrainError::Data(format!("no domain {domain}")))?;
        if data.x.rows() == 0 {
            return Err(TrainError::Data(format!("domain {domain} is empty")));
        }
        let idx: Vec<usize> = (0..batch)
            .map(|_| rng.random_range(0..data.x.rows()))
            .collect();
        Ok(data.x.select_rows(&idx))
    }
}

/// Why a run stopped before its iteration budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halt {
    pub iteration: u64,
    pub loss: f64,
    /// Iteration of the checkpoint the returned bundle was restored from.
    pub restored_from: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: Vec<LossReport>,
    pub last_checkpoint: Option<Checkpoint>,
    pub halted: Option<Halt>,
    pub generator_state: OptimizerState,
    pub discriminator_state: OptimizerState,
}

/// Files a run writes when given an output directory.
pub struct RunFiles {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            checkpoint: dir.join("checkpoint.json"),
        }
    }
}

struct MetricsWriter {
    out: csv::Writer<BufWriter<fs::File>>,
}

impl MetricsWriter {
    fn create(path: &Path, domains: usize) -> Result<Self, TrainError> {
        let file = fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(LossReport::csv_header(domains))?;
        Ok(Self { out })
    }

    fn push(&mut self, r: &LossReport) -> Result<(), TrainError> {
        Ok(self.out.write_record(r.csv_record())?)
    }

    fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush().map_err(|e| TrainError::io("metrics", e))
    }
}

fn orth_weight(cfg: &ExperimentConfig, iter: u64) -> f64 {
    if cfg.orth_warmup == 0 || iter >= cfg.orth_warmup {
        cfg.weights.lambda_orth
    } else {
        cfg.weights.lambda_orth * iter as f64 / cfg.orth_warmup as f64
    }
}

/// One discriminator ascent step; returns the gradients and the summed
/// adversarial value before the update.
fn disc_step(
    bundle: &mut ModelBundle,
    source: &(impl DomainSource + ?Sized),
    cfg: &ExperimentConfig,
    state: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Tensor>, f64), TrainError> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape);
    let mut total = None;
    for n in 0..cfg.plan.domains {
        let seeds = LatentBatch::sample(&cfg.plan, cfg.batch, n, rng)?;
        // Generated samples are constants for this step.
        let fake = tape.leaf(bundle.generate_batch(&seeds)?.2);
        let real = tape.leaf(source.real_batch(n, cfg.batch, rng)?);
        let fl = bound.disc_logits(&mut tape, fake, n)?;
        let rl = bound.disc_logits(&mut tape, real, n)?;
        let v = disc_value_on_tape(&mut tape, rl, fl)?;
        total = Some(match total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
    }
    let total = total.expect("at least one domain");
    // Ascent on the adversarial value.
    let loss = tape.scale(total, -1.0)?;
    let grads = tape.grad(loss, &bound.vars(ParamGroup::Discriminator))?;
    let value = tape.value(total).item();
    adam_step(
        &mut bundle.params_mut(ParamGroup::Discriminator),
        &grads,
        state,
        &cfg.adam,
    );
    Ok((grads, value))
}

/// Discriminator-only training against the bundle's current generator.
/// Returns the adversarial value (summed over domains) seen at each step.
pub fn train_discriminator(
    bundle: &mut ModelBundle,
    source: &(impl DomainSource + ?Sized),
    cfg: &ExperimentConfig,
    steps: usize,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::default();
    (0..steps)
        .map(|_| Ok(disc_step(bundle, source, cfg, &mut state, &mut rng)?.1))
        .collect()
}

/// Alternating adversarial training: `disc_steps_per_gen` discriminator
/// steps, then one step on the generator-side objective, per iteration.
///
/// Everything random is drawn from one ChaCha stream seeded by
/// `cfg.seed`, so a config fully determines the result. When `files` is
/// given, metrics are appended to a CSV and the latest checkpoint is kept
/// on disk.
pub fn train(
    cfg: &ExperimentConfig,
    source: &(impl DomainSource + ?Sized),
    init: Option<ModelBundle>,
    files: Option<&RunFiles>,
) -> Result<TrainOutcome, TrainError> {
    train_observed(cfg, source, init, files, &mut |_, _| {})
}

/// [`train`] with a callback invoked at every checkpoint with the
/// iteration count and the current bundle.
pub fn train_observed(
    cfg: &ExperimentConfig,
    source: &(impl DomainSource + ?Sized),
    init: Option<ModelBundle>,
    files: Option<&RunFiles>,
    on_checkpoint: &mut dyn FnMut(u64, &ModelBundle),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if source.domains() != cfg.plan.domains || source.dim() != cfg.plan.d {
        return Err(TrainError::Dimension(format!(
            "data has {} domains of dimension {}, plan expects {} of dimension {}",
            source.domains(),
            source.dim(),
            cfg.plan.domains,
            cfg.plan.d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bundle = match init {
        Some(b) => {
            b.validate()?;
            if b.plan != cfg.plan {
                return Err(TrainError::Config(
                    "initial bundle has a different plan".into(),
                ));
            }
            b
        }
        None => ModelBundle::init(cfg.plan, cfg.arch, &mut rng)?,
    };
    // Restore point for a halt before the first checkpoint.
    let mut initial = Some(bundle.clone());
    let mut gen_state = OptimizerState::default();
    let mut disc_state = OptimizerState::default();
    let mut log = Vec::with_capacity(cfg.iters as usize);
    let mut metrics = files
        .map(|f| MetricsWriter::create(&f.metrics, cfg.plan.domains))
        .transpose()?;
    let mut last_checkpoint = None;
    let mut halted = None;

    for iter in 0..cfg.iters {
        let mut disc_grads = Vec::new();
        for _ in 0..cfg.disc_steps_per_gen {
            disc_grads = disc_step(&mut bundle, source, cfg, &mut disc_state, &mut rng)?.0;
        }

        let mut weights = cfg.weights;
        weights.lambda_orth = orth_weight(cfg, iter);
        let mut real = Vec::with_capacity(cfg.plan.domains);
        let mut seeds = Vec::with_capacity(cfg.plan.domains);
        for n in 0..cfg.plan.domains {
            seeds.push(LatentBatch::sample(&cfg.plan, cfg.batch, n, &mut rng)?);
            real.push(source.real_batch(n, cfg.batch, &mut rng)?);
        }
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape);
        let terms =
            generator_objective_on_tape(&mut tape, &bound, &real, &seeds, &weights, &mut rng)?;
        let grads = tape.grad(terms.objective, &bound.vars(ParamGroup::Generator))?;
        let orth_exact = if cfg.oracle_mode {
            Some(oracle_orth(&bundle, &tape, &terms, &weights)?)
        } else {
            None
        };
        let report = crate::objective::report_from_terms(
            iter,
            &tape,
            &terms,
            &weights,
            orth_exact,
            &grads,
            &disc_grads,
        );
        drop(tape);

        if !report.total.is_finite() || report.total.abs() > DIVERGENCE_LIMIT {
            log::error!("loss {} at iteration {iter}; halting", report.total);
            let restored_from = match &last_checkpoint {
                Some(c) => {
                    let c: &Checkpoint = c;
                    bundle = c.bundle()?;
                    c.iteration
                }
                None => {
                    bundle = initial.take().expect("kept until the first checkpoint");
                    0
                }
            };
            halted = Some(Halt {
                iteration: iter,
                loss: report.total,
                restored_from,
            });
            if let Some(m) = metrics.as_mut() {
                m.push(&report)?;
            }
            log.push(report);
            break;
        }
        adam_step(
            &mut bundle.params_mut(ParamGroup::Generator),
            &grads,
            &mut gen_state,
            &cfg.adam,
        );

        if let Some(m) = metrics.as_mut() {
            m.push(&report)?;
        }
        if iter % 100 == 0 {
            log::debug!(
                "iter {iter}: gan {:.4} inv {:.4e} orth {:.4e}",
                report.gan_total,
                report.inv,
                report.orth
            );
        }
        log.push(report);

        let done = iter + 1;
        if done % cfg.audit_every == 0 || done == cfg.iters {
            let ckpt = Checkpoint::capture(&bundle, Some((&gen_state, &disc_state)), &rng, done);
            if let Some(f) = files {
                ckpt.save(&f.checkpoint)?;
            }
            if let Some(m) = metrics.as_mut() {
                m.flush()?;
            }
            last_checkpoint = Some(ckpt);
            initial = None;
            on_checkpoint(done, &bundle);
        }
    }
    if let Some(m) = metrics.as_mut() {
        m.flush()?;
    }
    Ok(TrainOutcome {
        bundle,
        log,
        last_checkpoint,
        halted,
        generator_state: gen_state,
        discriminator_state: disc_state,
    })
}
