use std::fs;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Single-threaded f64 reductions and ChaCha8 streams derived from the seed.
pub const DETERMINISM_MODE: &str = "bit-exact";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Halted,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command: argv, effective config, input
/// digests and the code version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub code_version: String,
    pub determinism_mode: String,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    /// Config file merged with flag overrides.
    pub effective_config: serde_json::Value,
}

/// Marks a run that stopped on divergence rather than an error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct HaltedRun(pub String);

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON form.
pub fn config_hash(value: &serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

fn now() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

/// Manifest file for an output location: `DIR/run_manifest.json` for a
/// directory, `STEM.manifest.json` next to a file.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("run_manifest.json");
    }
    let stem = out
        .file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub struct Session {
    manifest: RunManifest,
    path: PathBuf,
}

/// Output paths a command writes. Claiming a path that holds, or a
/// directory that contains, one of the run's inputs is refused so inputs
/// stay read-only.
pub struct Outputs {
    files: Vec<PathBuf>,
    protected: Vec<PathBuf>,
}

fn absolute(p: &Path) -> PathBuf {
    p.canonicalize()
        .or_else(|_| std::path::absolute(p))
        .unwrap_or_else(|_| p.to_path_buf())
}

impl Outputs {
    pub fn claim(&mut self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref().to_path_buf();
        let abs = absolute(&path);
        if let Some(input) = self.protected.iter().find(|p| p.starts_with(&abs)) {
            anyhow::bail!(
                "refusing to write {}: it would overwrite input {}",
                path.display(),
                input.display()
            );
        }
        self.files.push(path.clone());
        Ok(path)
    }
}

impl Session {
    /// Hashes the inputs and writes the manifest in the running state.
    pub fn start(
        argv: &[String],
        subcommand: &str,
        seed: u64,
        effective_config: serde_json::Value,
        inputs: &[&Path],
        path: PathBuf,
    ) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(InputFile {
                    path: p.to_path_buf(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command_line: argv.to_vec(),
            subcommand: subcommand.into(),
            config_hash: config_hash(&effective_config),
            seed,
            started_at: now(),
            finished_at: None,
            status: RunStatus::Running,
            error: None,
            code_version: format!("csdi-bench {}", env!("CARGO_PKG_VERSION")),
            determinism_mode: DETERMINISM_MODE.into(),
            inputs,
            outputs: Vec::new(),
            effective_config,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let session = Self { manifest, path };
        session.write()?;
        Ok(session)
    }

    fn write(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&self.path, text).with_context(|| format!("writing {}", self.path.display()))
    }

    /// Runs `body`, recording the files it reports, and finalizes the
    /// manifest whether it succeeds, fails or panics.
    pub fn run(mut self, body: impl FnOnce(&mut Outputs) -> Result<()>) -> Result<()> {
        let mut outputs = Outputs {
            files: Vec::new(),
            protected: self
                .manifest
                .inputs
                .iter()
                .map(|i| absolute(&i.path))
                .collect(),
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| body(&mut outputs)));
        self.manifest.outputs = outputs.files;
        self.manifest.finished_at = Some(now());
        let (status, error) = match &outcome {
            Ok(Ok(())) => (RunStatus::Succeeded, None),
            Ok(Err(e)) if e.is::<HaltedRun>() => (RunStatus::Halted, Some(format!("{e:#}"))),
            Ok(Err(e)) => (RunStatus::Failed, Some(format!("{e:#}"))),
            Err(_) => (RunStatus::Failed, Some("panicked".into())),
        };
        self.manifest.status = status;
        self.manifest.error = error;
        let written = self.write();
        match outcome {
            Ok(result) => result.and(written),
            Err(panic) => resume_unwind(panic),
        }
    }
}
