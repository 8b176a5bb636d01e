use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use csdi_core::eval::{sweep as run_sweep, EvalConfig, SweepResult};
use csdi_core::model::ModelBundle;
use csdi_core::train::{train_observed, ExperimentConfig, RunFiles, TrainOutcome};
use csdi_core::world::{load_two_domain_set, WorldSpec};
use serde_json::json;

use super::{default_out, default_plan, load_json, load_world, usage, WorldConfig};
use crate::cli::{SweepArgs, TrainArgs, TrainFlags};
use crate::manifest::{config_hash, manifest_path, HaltedRun, Session};
use crate::tables::{write_json, write_plot_data};

/// Iterations when no config file is given.
const DEFAULT_ITERS: u64 = 2000;

/// Config file (or defaults) with flag overrides applied.
fn experiment_config(
    config: Option<&Path>,
    seed: Option<u64>,
    flags: &TrainFlags,
) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::new(default_plan(), DEFAULT_ITERS, 0),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = flags.iters {
        cfg.iters = n;
    }
    if flags.oracle {
        cfg.oracle_mode = true;
    }
    if let Some(k) = flags.probes {
        cfg.weights.probes = k;
    }
    if let Some(kind) = flags.probe_kind {
        cfg.weights.probe_kind = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A world from file, or one forged from the plan with zero tilt.
fn world_for(
    path: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<(WorldSpec, serde_json::Value)> {
    match path {
        Some(p) => Ok((load_world(p)?, json!({ "world": p }))),
        None => {
            let forged = WorldConfig {
                plan: cfg.plan,
                ..WorldConfig::default()
            };
            Ok((forged.forge()?, json!({ "forged_world": forged })))
        }
    }
}

fn halted(out: &TrainOutcome) -> Result<()> {
    match &out.halted {
        Some(h) => Err(HaltedRun(format!(
            "loss {:e} at iteration {} exceeded the divergence limit; restored the checkpoint from iteration {}",
            h.loss, h.iteration, h.restored_from
        ))
        .into()),
        None => Ok(()),
    }
}

pub fn train(args: TrainArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let cfg = experiment_config(config, args.common.seed, &args.train)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    let dataset_manifest = args.data.dataset.as_ref().map(|d| d.join("manifest.csv"));

    enum Source {
        World(WorldSpec),
        Dataset(Vec<csdi_core::world::DomainData>),
    }
    let (source, data_desc) = match (&args.data.world, &args.data.dataset) {
        (_, Some(dir)) => {
            let data = load_two_domain_set(dir)
                .with_context(|| format!("loading dataset {}", dir.display()))?;
            inputs.push(dataset_manifest.as_deref().expect("set with the dataset"));
            (Source::Dataset(data), json!({ "dataset": dir }))
        }
        (world, None) => {
            let (w, desc) = world_for(world.as_deref(), &cfg)?;
            if let Some(p) = world {
                inputs.push(p);
            }
            (Source::World(w), desc)
        }
    };
    let effective = json!({ "experiment": cfg, "data": data_desc });
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("train", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "train",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let cfg_path = files.claim(out.join("config.json"))?;
        fs::write(&cfg_path, cfg.to_json()? + "\n")?;
        let run_files = RunFiles {
            metrics: files.claim(out.join("metrics.csv"))?,
            checkpoint: files.claim(out.join("checkpoint.json"))?,
        };
        let total = cfg.iters;
        let mut progress = |iteration: u64, _: &ModelBundle| {
            log::info!("iteration {iteration}/{total}: checkpoint written");
        };
        let outcome = match &source {
            Source::World(w) => train_observed(&cfg, w, None, Some(&run_files), &mut progress)?,
            Source::Dataset(d) => {
                train_observed(&cfg, d.as_slice(), None, Some(&run_files), &mut progress)?
            }
        };
        let summary = json!({
            "config_hash": cfg.hash(),
            "iterations": outcome.log.len(),
            "final": outcome.log.last(),
            "halted": outcome.halted.as_ref().map(|h| json!({
                "iteration": h.iteration,
                "loss": h.loss,
                "restored_from": h.restored_from,
            })),
        });
        write_json(&files.claim(out.join("summary.json"))?, &summary)?;
        if let Some(last) = outcome.log.last() {
            println!(
                "trained {} iterations: gan {:.4}, inv {:.3e}, orth {:.3e} -> {}",
                outcome.log.len(),
                last.gan_total,
                last.inv,
                last.orth,
                out.display()
            );
        } else {
            println!("no iterations run -> {}", out.display());
        }
        halted(&outcome)
    })
}

pub fn sweep(args: SweepArgs, argv: &[String]) -> Result<()> {
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if args.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let config = args.common.config.as_deref();
    let base = experiment_config(config, args.common.seed, &args.train)?;
    let eval: EvalConfig = load_json(args.eval_config.as_deref())?;
    let (world, world_desc) = world_for(args.world.as_deref(), &base)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.extend(args.world.as_deref());
    inputs.extend(args.eval_config.as_deref());
    let effective = json!({
        "experiment": base,
        "data": world_desc,
        "eval": eval,
        "param": args.param,
        "values": args.values,
        "repeats": args.repeats,
    });
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("sweep", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "sweep",
        base.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let base_path = files.claim(out.join("base_config.json"))?;
        fs::write(&base_path, base.to_json()? + "\n")?;
        let result = run_sweep(&base, args.param, &args.values, args.repeats, &world, &eval, args.jobs)?;
        write_json(&files.claim(out.join("sweep.json"))?, &result)?;
        let csv_path = files.claim(out.join("sweep.csv"))?;
        result.write_csv(fs::File::create(&csv_path)?)?;
        write_runs_csv(&files.claim(out.join("runs.csv"))?, &result)?;
        write_plot_data(&files.claim(out.join("plot_data.csv"))?, &plot_points(&result))?;
        for row in &result.rows {
            println!(
                "{}={}: runs {} missing {} | style R² {:.3} content R² {:.3} mmd {:.2e} orth {:.2e} probe err {:.3}",
                result.swept_param,
                row.value,
                row.runs.len(),
                row.missing,
                row.r2_style,
                row.r2_content,
                row.mmd,
                row.orth_exact_mean,
                row.probe_rel_error
            );
        }
        Ok(())
    })
}

fn write_runs_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "param",
        "value",
        "seed",
        "config_hash",
        "mmd",
        "mmd_init",
        "r2_content",
        "r2_style",
        "orth_exact_mean",
        "probe_rel_error",
        "final_gan",
        "unreliable",
    ])?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    for row in &result.rows {
        for m in &row.runs {
            w.write_record([
                result.swept_param.to_string(),
                row.value.to_string(),
                m.seed.to_string(),
                m.config_hash.clone(),
                mean(&m.mmd).to_string(),
                mean(&m.mmd_init).to_string(),
                m.r2_content.to_string(),
                m.r2_style.to_string(),
                m.orth_exact_mean.to_string(),
                m.probe_rel_error.to_string(),
                m.final_gan.to_string(),
                m.unreliable.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn plot_points(result: &SweepResult) -> Vec<(f64, f64, String)> {
    let mut points = Vec::new();
    for row in &result.rows {
        for (name, y) in [
            ("r2_style", row.r2_style),
            ("r2_content", row.r2_content),
            ("mmd", row.mmd),
            ("orth_exact_mean", row.orth_exact_mean),
            ("probe_rel_error", row.probe_rel_error),
        ] {
            points.push((row.value, y, name.to_string()));
        }
    }
    points
}
