use std::path::Path;

use anyhow::Result;
use csdi_core::model::{
    invert_sample, translate as translate_pair, InversionConfig, InversionResult,
};
use serde_json::json;

use super::{default_out, load_decoder, load_json};
use crate::cli::{InvertArgs, TranslateArgs};
use crate::manifest::{config_hash, manifest_path, Outputs, Session};
use crate::tables::{columns, joined_rows, read_matrix, write_matrix};

fn inversion_config(config: Option<&Path>, seed: Option<u64>) -> Result<InversionConfig> {
    let mut cfg: InversionConfig = load_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// `latents.csv` (content, style, divergence) and `traces.csv`.
fn write_inversion(
    files: &mut Outputs,
    dir: &Path,
    prefix: &str,
    r: &InversionResult,
) -> Result<()> {
    let mut header = columns("content", r.content.cols());
    header.extend(columns("style", r.style.cols()));
    header.push("divergence".into());
    let mut rows = joined_rows(&[&r.content, &r.style]);
    for (row, d) in rows.iter_mut().zip(&r.divergence) {
        row.push(*d);
    }
    write_matrix(
        &files.claim(dir.join(format!("{prefix}latents.csv")))?,
        &header,
        &rows,
    )?;
    let traces: Vec<Vec<f64>> = r
        .traces
        .iter()
        .enumerate()
        .flat_map(|(k, t)| {
            t.iter()
                .enumerate()
                .map(move |(step, v)| vec![k as f64, step as f64, *v])
        })
        .collect();
    let header = ["restart", "step", "mean_divergence"].map(String::from);
    write_matrix(
        &files.claim(dir.join(format!("{prefix}traces.csv")))?,
        &header,
        &traces,
    )
}

pub fn invert(args: InvertArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let cfg = inversion_config(config, args.common.seed)?;
    let (decoder, source, desc) = load_decoder(&args.decoder)?;
    let x = read_matrix(&args.input)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.extend([source.as_path(), args.input.as_path()]);
    let effective =
        json!({ "inversion": cfg, "decoder": desc, "input": args.input, "domain": args.domain });
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("invert", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "invert",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let dec = decoder.get();
        let result = invert_sample(dec, &x, args.domain, None, &cfg)?;
        write_inversion(files, &out, "", &result)?;
        let recon = dec.decode(&result.content, &result.style)?;
        write_matrix(
            &files.claim(out.join("reconstruction.csv"))?,
            &columns("x", recon.cols()),
            &joined_rows(&[&recon]),
        )?;
        let mean = result.divergence.iter().sum::<f64>() / result.divergence.len().max(1) as f64;
        println!(
            "inverted {} rows: mean divergence {mean:.3e} -> {}",
            x.rows(),
            out.display()
        );
        Ok(())
    })
}

pub fn translate(args: TranslateArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let cfg = inversion_config(config, args.common.seed)?;
    let (decoder, source, desc) = load_decoder(&args.decoder)?;
    let x = read_matrix(&args.input)?;
    let style_ref = read_matrix(&args.style_ref)?;
    let mut inputs: Vec<&Path> = config.into_iter().collect();
    inputs.extend([
        source.as_path(),
        args.input.as_path(),
        args.style_ref.as_path(),
    ]);
    let effective = json!({
        "inversion": cfg,
        "decoder": desc,
        "input": args.input,
        "style_ref": args.style_ref,
        "source_domain": args.source_domain,
        "target_domain": args.target_domain,
    });
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| default_out("translate", &config_hash(&effective)));
    let session = Session::start(
        argv,
        "translate",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        let t = translate_pair(
            decoder.get(),
            &x,
            args.source_domain,
            &style_ref,
            args.target_domain,
            &cfg,
        )?;
        write_matrix(
            &files.claim(out.join("translated.csv"))?,
            &columns("x", t.output.cols()),
            &joined_rows(&[&t.output]),
        )?;
        write_inversion(files, &out, "source_", &t.source)?;
        write_inversion(files, &out, "style_ref_", &t.style_ref)?;
        println!("translated {} rows -> {}", x.rows(), out.display());
        Ok(())
    })
}
