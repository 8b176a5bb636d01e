use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use csdi_core::eval::SweepParam;
use csdi_core::objective::ProbeKind;

#[derive(Debug, Parser)]
#[command(
    name = "csdi-bench",
    version,
    about = "Workbench for content-style identification via differential independence",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forge a ground-truth world with a chosen tilt and save it as JSON.
    MakeWorld(MakeWorldArgs),
    /// Build the two-domain colorized digit set from IDX files or PNGs.
    ColorizeDataset(ColorizeArgs),
    /// Train a model bundle on a world or a built dataset.
    Train(TrainArgs),
    /// Audit principal angles, orthogonality losses and the leakage bound.
    JacobianReport(ReportArgs),
    /// Score a trained checkpoint against a world's true latents.
    Eval(EvalArgs),
    /// Train and evaluate one run per (value, seed) of a swept parameter.
    Sweep(SweepArgs),
    /// Error distribution of the probe estimator against the exact loss.
    EstimatorStudy(StudyArgs),
    /// Recover latents for observations by optimization.
    Invert(InvertArgs),
    /// Render source content with the style of a reference.
    Translate(TranslateArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root of all randomness for the command.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output location (a file for make-world, a directory otherwise).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Overrides of the training config.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, value_name = "N")]
    pub iters: Option<u64>,
    /// Co-evaluate the exact orthogonality loss every step.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_name = "K")]
    pub probes: Option<usize>,
    #[arg(long, value_name = "NAME", value_parser = parse_probe_kind)]
    pub probe_kind: Option<ProbeKind>,
}

/// Where training data comes from; a world is forged from the plan when
/// neither is given.
#[derive(Debug, Args)]
pub struct DataFlags {
    #[arg(long, value_name = "PATH", conflicts_with = "dataset")]
    pub world: Option<PathBuf>,
    /// Directory written by colorize-dataset.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeWorldArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "F")]
    pub xi: Option<f64>,
    /// Also write N observations per domain, with their true latents.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep only the first N source images.
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataFlags,
}

/// The map under audit: a world or a trained checkpoint.
#[derive(Debug, Args)]
pub struct DecoderFlags {
    #[arg(long, value_name = "PATH")]
    pub world: Option<PathBuf>,
    /// Checkpoint file, or a run directory holding checkpoint.json.
    #[arg(long, value_name = "PATH", conflicts_with = "world")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub decoder: DecoderFlags,
    /// Tilt used on the bound's right-hand side (each point's own when absent).
    #[arg(long, value_name = "F")]
    pub xi: Option<f64>,
    #[arg(long, value_name = "K")]
    pub probes: Option<usize>,
    #[arg(long, value_name = "NAME", value_parser = parse_probe_kind)]
    pub probe_kind: Option<ProbeKind>,
    #[arg(long, value_name = "N", default_value_t = 32)]
    pub points: usize,
    /// Domain whose latent prior supplies the audited points.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub domain: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub world: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_name = "PATH")]
    pub world: Option<PathBuf>,
    #[arg(long, value_name = "NAME", value_parser = parse_sweep_param)]
    pub param: SweepParam,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Seeds per value, counting up from the base seed.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Evaluation settings (JSON).
    #[arg(long, value_name = "PATH")]
    pub eval_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Draw Jacobian pairs from this world instead of random matrices.
    #[arg(long, value_name = "PATH")]
    pub world: Option<PathBuf>,
    /// Study a single probe count.
    #[arg(long, value_name = "K")]
    pub probes: Option<usize>,
    #[arg(long, value_name = "NAME", value_parser = parse_probe_kind)]
    pub probe_kind: Option<ProbeKind>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub decoder: DecoderFlags,
    /// CSV of observations, one row each.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub domain: usize,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub decoder: DecoderFlags,
    /// CSV of source observations.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// CSV of style references, row-aligned with the input.
    #[arg(long, value_name = "PATH")]
    pub style_ref: PathBuf,
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub source_domain: usize,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub target_domain: usize,
}

fn parse_probe_kind(s: &str) -> Result<ProbeKind, String> {
    s.parse()
}

fn parse_sweep_param(s: &str) -> Result<SweepParam, String> {
    s.parse()
        .map_err(|e: csdi_core::eval::EvalError| e.to_string())
}
