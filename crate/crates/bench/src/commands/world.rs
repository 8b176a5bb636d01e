use std::path::{Path, PathBuf};

use anyhow::Result;
use csdi_core::world::{
    build_two_domain_set, sample_world, ColorizeConfig, ImageSource, WorldSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_json, usage, WorldConfig};
use crate::cli::{ColorizeArgs, MakeWorldArgs};
use crate::manifest::{manifest_path, Outputs, Session};
use crate::tables::{columns, joined_rows, write_matrix};

pub fn make_world(args: MakeWorldArgs, argv: &[String]) -> Result<()> {
    let config = args.common.config.as_deref();
    let mut cfg: WorldConfig = load_json(config)?;
    if let Some(xi) = args.xi {
        cfg.xi = xi;
    }
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let out = args
        .common
        .out
        .unwrap_or_else(|| PathBuf::from("world.json"));
    let inputs: Vec<&Path> = config.into_iter().collect();
    let mut effective = serde_json::to_value(&cfg)?;
    effective["samples"] = serde_json::json!(args.samples);
    let session = Session::start(
        argv,
        "make-world",
        cfg.seed,
        effective,
        &inputs,
        manifest_path(&out, false),
    )?;
    session.run(|files| {
        let world = cfg.forge()?;
        world.save(&files.claim(&out)?)?;
        if let Some(n) = args.samples {
            write_samples(files, &world, &out, n)?;
        }
        println!(
            "world d={} d_c={} d_s={} domains={} xi={} -> {}",
            world.plan.d,
            world.plan.d_c,
            world.plan.d_s,
            world.plan.domains,
            world.xi,
            out.display()
        );
        Ok(())
    })
}

/// `STEM_domainN_x.csv` and `STEM_domainN_latents.csv` beside the world
/// file; domain `n` draws from its own ChaCha8 stream of the world seed.
fn write_samples(files: &mut Outputs, world: &WorldSpec, out: &Path, n: usize) -> Result<()> {
    let stem = out
        .file_stem()
        .map_or_else(|| "world".into(), |s| s.to_string_lossy().into_owned());
    for domain in 0..world.plan.domains {
        let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
        rng.set_stream(1 + domain as u64);
        let sample = sample_world(world, n, domain, &mut rng)?;
        let x_path = files.claim(out.with_file_name(format!("{stem}_domain{domain}_x.csv")))?;
        write_matrix(
            &x_path,
            &columns("x", world.plan.d),
            &joined_rows(&[&sample.x]),
        )?;
        let mut header = columns("c", world.plan.d_c);
        header.extend(columns("s", world.plan.d_s));
        let l_path =
            files.claim(out.with_file_name(format!("{stem}_domain{domain}_latents.csv")))?;
        write_matrix(&l_path, &header, &joined_rows(&[&sample.c, &sample.s]))?;
    }
    Ok(())
}

/// Where the grayscale digits come from. Relative paths are resolved
/// against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum SourceConfig {
    Idx { images: PathBuf, labels: PathBuf },
    PngDir(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetConfig {
    source: SourceConfig,
    #[serde(default)]
    colorize: ColorizeConfig,
    #[serde(default)]
    limit: Option<usize>,
}

pub fn colorize_dataset(args: ColorizeArgs, argv: &[String]) -> Result<()> {
    let Some(config) = args.common.config.as_deref() else {
        return Err(usage(
            "colorize-dataset needs --config naming the source images",
        ));
    };
    let text = std::fs::read_to_string(config)?;
    let mut cfg: DatasetConfig = serde_json::from_str(&text)?;
    let base = config.parent().unwrap_or(Path::new(""));
    let source = match &mut cfg.source {
        SourceConfig::Idx { images, labels } => {
            *images = base.join(&*images);
            *labels = base.join(&*labels);
            ImageSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
            }
        }
        SourceConfig::PngDir(dir) => {
            *dir = base.join(&*dir);
            ImageSource::PngDir(dir.clone())
        }
    };
    if let Some(seed) = args.common.seed {
        cfg.colorize.seed = seed;
    }
    if args.limit.is_some() {
        cfg.limit = args.limit;
    }
    let out = args.common.out.unwrap_or_else(|| PathBuf::from("dataset"));
    let mut inputs: Vec<&Path> = vec![config];
    if let ImageSource::Idx { images, labels } = &source {
        inputs.extend([images.as_path(), labels.as_path()]);
    }
    let session = Session::start(
        argv,
        "colorize-dataset",
        cfg.colorize.seed,
        serde_json::to_value(&cfg)?,
        &inputs,
        manifest_path(&out, true),
    )?;
    session.run(|files| {
        files.claim(&out)?;
        if let ImageSource::PngDir(dir) = &source {
            let (a, b) = (super::absolute_or_same(dir), super::absolute_or_same(&out));
            if a.starts_with(&b) {
                anyhow::bail!(
                    "output directory {} contains the source images",
                    out.display()
                );
            }
        }
        let records = build_two_domain_set(&source, &cfg.colorize, &out, cfg.limit)?;
        files.claim(out.join("manifest.csv"))?;
        println!("{} images written to {}", records.len(), out.display());
        Ok(())
    })
}
