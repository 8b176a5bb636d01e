//! Command-line entry point: world and dataset construction, training,
//! Jacobian audits, evaluation, sweeps and inversion, each run leaving a
//! manifest that pins down how to reproduce it.

pub mod cli;
mod commands;
pub mod manifest;
mod tables;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

pub use cli::Cli;
pub use manifest::{RunManifest, RunStatus};

/// A bad flag value or a missing flag combination; exits with status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CSDI_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    let text = e.render().to_string();
                    eprint!("{text}");
                    if !text.contains("Usage:") {
                        eprintln!("\n{}", Cli::command().render_usage());
                    }
                    EXIT_USAGE
                }
            };
        }
    };
    init_logging();
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match commands::dispatch(cli.command, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
