use std::path::{Path, PathBuf};

use anyhow::Result;
use csdi_core::autodiff::Tensor;
use csdi_core::eval::{disentanglement_report, estimator_error_study, EvalConfig, MmdReference};
use csdi_core::jacobian::{exact_jacobian_pairs, point_reports, JacobianPair, ReportConfig};
use csdi_core::objective::ProbeKind;
use csdi_core::train::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    checkpoint_file, default_out, load_bundle, load_decoder, load_json, load_world, usage,
};
use crate::cli::{EvalArgs, ReportArgs, StudyArgs};
use crate::manifest::{config_hash, manifest_path, sha256_hex, Session};
use crate::tables::{write_json, write_plot_data};

pub fn jacobian_report(args: ReportArgs, argv: &[String]) -> Result<()> {
    if args.points == 0 {
        return Err(usage("--points must be at least 1"));
    }
    let config = args.common.config.as_deref();
    let mut cfg: ReportConfig = load_json(config)?;
    if args.xi.is_some() {
        cfg.xi = args.xi;
    }
    if let Some(k) = args.probes {
        cfg.probes = k;
    }
    if let Some(kind) = args.probe_kind {
        cfg.probe_kind = kind;
    }
    let seed = args.common.seed.unwrap_or(0);
    let (decoder, source, source_desc) = load_decoder(&args.decoder)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.push(&source);
    let effective = json!({
        "report": cfg,
        "points": args.points,
        "domain": args.domain,
        "seed": seed,
        "decoder": source_desc,
    });
    let hash = config_hash(&effective);
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("jacobian-report", &hash));
    let session = Session::start(
        argv,
        "jacobian-report",
        seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let dec = decoder.get();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, s) = dec.sample_prior(args.points, args.domain, &mut rng)?;
        let (reports, _) = point_reports(dec, &c, &s, &cfg, &mut rng)?;
        write_json(&files.claim(out.join("report.json"))?, &reports)?;

        let mut w = csv::Writer::from_path(files.claim(out.join("report.csv"))?)?;
        w.write_record([
            "point_id",
            "smallest_angle",
            "xi_implied",
            "sigma_min",
            "rank_c",
            "rank_s",
            "orth_loss_exact",
            "orth_loss_probe",
            "bound_lhs",
            "bound_rhs",
            "bound_holds",
            "config_hash",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &reports {
            let smallest = r.angles.iter().copied().fold(f64::INFINITY, f64::min);
            w.write_record([
                r.point_id.to_string(),
                smallest.to_string(),
                r.xi_implied.to_string(),
                r.sigma_min.to_string(),
                r.ranks[0].to_string(),
                r.ranks[1].to_string(),
                r.orth_loss_exact.to_string(),
                r.orth_loss_probe.to_string(),
                opt(r.bound_lhs),
                opt(r.bound_rhs),
                r.bound_holds.map_or_else(String::new, |b| b.to_string()),
                hash.clone(),
            ])?;
        }
        w.flush()?;

        let smallest = reports
            .iter()
            .flat_map(|r| r.angles.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let largest_xi = reports.iter().map(|r| r.xi_implied).fold(f64::NEG_INFINITY, f64::max);
        let mean = |f: fn(&csdi_core::jacobian::PointReport) -> f64| {
            reports.iter().map(f).sum::<f64>() / reports.len() as f64
        };
        let checked = reports.iter().filter(|r| r.bound_holds.is_some()).count();
        let held = reports.iter().filter(|r| r.bound_holds == Some(true)).count();
        let summary = json!({
            "config_hash": hash,
            "points": reports.len(),
            "smallest_angle": smallest,
            "largest_xi_implied": largest_xi,
            "mean_orth_loss_exact": mean(|r| r.orth_loss_exact),
            "mean_orth_loss_probe": mean(|r| r.orth_loss_probe),
            "bound_checked": checked,
            "bound_held": held,
        });
        write_json(&files.claim(out.join("summary.json"))?, &summary)?;
        println!(
            "{} points: smallest principal angle {:.12} (xi {:.12}); orth exact {:.3e}, probe {:.3e}; bound held at {held}/{checked}",
            reports.len(),
            smallest,
            largest_xi,
            summary["mean_orth_loss_exact"].as_f64().unwrap_or(f64::NAN),
            summary["mean_orth_loss_probe"].as_f64().unwrap_or(f64::NAN),
        );
        Ok(())
    })
}

/// Hash of the run that produced a checkpoint: its `config.json` when it
/// sits in a run directory, otherwise the checkpoint file's own digest.
fn run_hash(checkpoint: &Path) -> Result<String> {
    let cfg = checkpoint.with_file_name("config.json");
    if cfg.is_file() {
        if let Ok(c) = ExperimentConfig::load(&cfg) {
            return Ok(c.hash());
        }
    }
    Ok(sha256_hex(&std::fs::read(checkpoint)?))
}

pub fn eval(args: EvalArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let mut cfg: EvalConfig = load_json(config)?;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let ckpt = checkpoint_file(&args.checkpoint);
    let bundle = load_bundle(&ckpt)?;
    let world = load_world(&args.world)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.extend([ckpt.as_path(), args.world.as_path()]);
    let effective = json!({ "eval": cfg, "checkpoint": ckpt, "world": args.world });
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("eval", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "eval",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let hash = run_hash(&ckpt)?;
        let mut report = disentanglement_report(&bundle, &world, &cfg)?;
        report.config_hash = Some(hash.clone());
        let reference = MmdReference::draw(&world, cfg.samples, cfg.seed.wrapping_add(1))?;
        let mmd = reference.score(&bundle, cfg.seed)?;
        write_json(
            &files.claim(out.join("eval.json"))?,
            &json!({ "r2": report, "mmd_per_domain": mmd }),
        )?;
        let mut w = csv::Writer::from_path(files.claim(out.join("eval.csv"))?)?;
        w.write_record(["metric", "value", "config_hash"])?;
        let mut rows = vec![
            ("r2_content".to_string(), report.r2_content),
            ("r2_style_mean".to_string(), report.r2_style_mean),
        ];
        rows.extend(
            report
                .r2_content_per_coordinate
                .iter()
                .enumerate()
                .map(|(j, v)| (format!("r2_content_{j}"), *v)),
        );
        rows.extend(
            report
                .r2_style_per_domain
                .iter()
                .enumerate()
                .map(|(n, v)| (format!("r2_style_domain{n}"), *v)),
        );
        rows.extend(
            mmd.iter()
                .enumerate()
                .map(|(n, v)| (format!("mmd_domain{n}"), *v)),
        );
        rows.push(("recovery_failures".into(), report.failures as f64));
        for (metric, value) in &rows {
            w.write_record([metric.clone(), value.to_string(), hash.clone()])?;
        }
        w.flush()?;
        println!(
            "content R² {:.4}, style R² {:.4} {:?}, mmd {:?}{}",
            report.r2_content,
            report.r2_style_mean,
            report.r2_style_per_domain,
            mmd,
            if report.unreliable {
                " (unreliable: many latents not recovered)"
            } else {
                ""
            }
        );
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StudyConfig {
    pairs: usize,
    /// Shape of random pairs; ignored when pairs come from a world.
    d: usize,
    d_c: usize,
    d_s: usize,
    probe_counts: Vec<usize>,
    kinds: Vec<ProbeKind>,
    trials: usize,
    eps: f64,
    seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            pairs: 100,
            d: 64,
            d_c: 4,
            d_s: 4,
            probe_counts: vec![2, 8, 32, 128, 1024],
            kinds: vec![
                ProbeKind::Gaussian,
                ProbeKind::Rademacher,
                ProbeKind::BasisEnumeration,
            ],
            trials: 10,
            eps: 1e-8,
            seed: 0,
        }
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

pub fn estimator_study(args: StudyArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let mut cfg: StudyConfig = load_json(config)?;
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if let Some(k) = args.probes {
        cfg.probe_counts = vec![k];
    }
    if let Some(kind) = args.probe_kind {
        cfg.kinds = vec![kind];
    }
    if cfg.pairs == 0 || cfg.probe_counts.contains(&0) || cfg.kinds.is_empty() {
        return Err(usage(
            "need at least one pair, one probe kind and positive probe counts",
        ));
    }
    let world = args.world.as_deref().map(load_world).transpose()?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.extend(args.world.as_deref());
    let effective = json!({ "study": cfg, "world": args.world });
    let out: PathBuf = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("estimator-study", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "estimator-study",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let pairs: Vec<JacobianPair> = match &world {
            Some(w) => {
                let mut pairs = Vec::with_capacity(cfg.pairs);
                for i in 0..cfg.pairs {
                    let (c, s) = w.sample_latents(1, i % w.plan.domains, &mut rng)?;
                    pairs.extend(exact_jacobian_pairs(w, &c, &s)?);
                }
                pairs
            }
            None => (0..cfg.pairs)
                .map(|_| {
                    JacobianPair::new(
                        gaussian(cfg.d, cfg.d_c, &mut rng),
                        gaussian(cfg.d, cfg.d_s, &mut rng),
                    )
                })
                .collect::<Result<_, _>>()?,
        };
        let rows = estimator_error_study(
            &pairs,
            &cfg.probe_counts,
            &cfg.kinds,
            cfg.trials,
            cfg.eps,
            cfg.seed.wrapping_add(1),
        )?;
        write_json(&files.claim(out.join("estimator.json"))?, &rows)?;
        let mut w = csv::Writer::from_path(files.claim(out.join("estimator.csv"))?)?;
        w.write_record(["probe_kind", "probes", "samples", "median", "p90", "max"])?;
        for r in &rows {
            w.write_record([
                r.probe_kind.to_string(),
                r.probes.to_string(),
                r.samples.to_string(),
                r.median.to_string(),
                r.p90.to_string(),
                r.max.to_string(),
            ])?;
            println!(
                "{:>17} K={:<5} median {:.3e}  p90 {:.3e}  max {:.3e}",
                r.probe_kind, r.probes, r.median, r.p90, r.max
            );
        }
        w.flush()?;
        let points: Vec<(f64, f64, String)> = rows
            .iter()
            .map(|r| (r.probes as f64, r.median, r.probe_kind.to_string()))
            .collect();
        write_plot_data(&files.claim(out.join("plot_data.csv"))?, &points)?;
        Ok(())
    })
}
