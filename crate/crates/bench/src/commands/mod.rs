mod audit;
mod inversion;
mod runs;
mod world;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use csdi_core::model::{Checkpoint, DimensionPlan, LatentDecoder, ModelBundle};
use csdi_core::world::{forge_world, NonlinearityConfig, WorldSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cli::{Command, DecoderFlags};
use crate::UsageError;

pub fn dispatch(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::MakeWorld(a) => world::make_world(a, argv),
        Command::ColorizeDataset(a) => world::colorize_dataset(a, argv),
        Command::Train(a) => runs::train(a, argv),
        Command::JacobianReport(a) => audit::jacobian_report(a, argv),
        Command::Eval(a) => audit::eval(a, argv),
        Command::Sweep(a) => runs::sweep(a, argv),
        Command::EstimatorStudy(a) => audit::estimator_study(a, argv),
        Command::Invert(a) => inversion::invert(a, argv),
        Command::Translate(a) => inversion::translate(a, argv),
    }
}

/// Twelve observed dimensions, one shared, one content-only and one
/// style-only seed coordinate, two domains.
fn default_plan() -> DimensionPlan {
    DimensionPlan::from_blocks(12, 1, 1, 1, 2).expect("valid plan")
}

/// Settings for forging a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub plan: DimensionPlan,
    pub xi: f64,
    pub nonlinearity: NonlinearityConfig,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            plan: default_plan(),
            xi: 0.0,
            nonlinearity: NonlinearityConfig::default(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    fn forge(&self) -> Result<WorldSpec> {
        Ok(forge_world(
            self.plan,
            self.xi,
            self.nonlinearity,
            self.seed,
        )?)
    }
}

/// A JSON config file, or the default when none is given.
fn load_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_world(path: &Path) -> Result<WorldSpec> {
    WorldSpec::load(path).with_context(|| format!("loading world {}", path.display()))
}

/// Accepts a checkpoint file or a run directory holding `checkpoint.json`.
fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("checkpoint.json")
    } else {
        path.to_path_buf()
    }
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let ckpt =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ckpt.bundle()?)
}

/// `runs/<subcommand>-<first 12 hex digits of the config hash>`.
fn default_out(subcommand: &str, hash: &str) -> PathBuf {
    PathBuf::from("runs").join(format!("{subcommand}-{}", &hash[..12]))
}

/// The map a command audits or inverts.
enum Decoder {
    World(WorldSpec),
    Model(ModelBundle),
}

impl Decoder {
    fn get(&self) -> &dyn LatentDecoder {
        match self {
            Decoder::World(w) => w,
            Decoder::Model(m) => m,
        }
    }
}

/// The decoder, its source file, and a JSON description for the manifest.
fn load_decoder(flags: &DecoderFlags) -> Result<(Decoder, PathBuf, serde_json::Value)> {
    match (&flags.world, &flags.checkpoint) {
        (Some(w), None) => Ok((
            Decoder::World(load_world(w)?),
            w.clone(),
            serde_json::json!({ "world": w }),
        )),
        (None, Some(c)) => {
            let file = checkpoint_file(c);
            Ok((
                Decoder::Model(load_bundle(&file)?),
                file.clone(),
                serde_json::json!({ "checkpoint": file }),
            ))
        }
        _ => Err(UsageError("give exactly one of --world or --checkpoint".into()).into()),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn absolute_or_same(p: &Path) -> PathBuf {
    p.canonicalize()
        .or_else(|_| std::path::absolute(p))
        .unwrap_or_else(|_| p.to_path_buf())
}
