//! Shared command plumbing: fresh-path discipline, artifact IO, the
//! reproducibility stanza, and error classification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsn_core::container::{self, Container};
use tsn_core::error::{Error, Result};
use tsn_core::runconfig::RunConfig;
use tsn_core::util::sha256_hex;
use tsn_core::Checkpoint32;

pub struct Ctx {
    pub run_config: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Ctx {
    pub fn run_config(&self) -> Result<RunConfig> {
        match &self.run_config {
            Some(path) => RunConfig::from_json(&read_text(path)?),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
            .or_else(|| {
                std::env::var("TSN_THREADS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(1)
            .max(1)
    }
}

/// Output-directory default: flag value or TSN_OUT_DIR or `.`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var("TSN_OUT_DIR").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Commands never overwrite anything: outputs must be fresh paths.
pub fn require_fresh(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::Config(format!(
            "output path {} already exists; outputs land in fresh paths",
            path.display()
        )));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    require_fresh(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    require_fresh(path)?;
    c.write_to(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint32> {
    container::checkpoint_from_container(&Container::read_from(path)?)
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Reproducibility stanza written next to every command's outputs:
/// the resolved arguments (hashed), input fingerprints, seeds, and version.
pub struct RunInfo {
    pub command: String,
    pub args: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl RunInfo {
    pub fn new(command: &str, args: serde_json::Value) -> Self {
        RunInfo {
            command: command.into(),
            args,
            inputs: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), file_fingerprint(path)?);
        Ok(self)
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Write `<stem>.run.json` next to the named output.
    pub fn write_next_to(&self, output: &Path) -> Result<()> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        let path = output.with_file_name(name);
        self.write_at(&path)
    }

    pub fn write_at(&self, path: &Path) -> Result<()> {
        let args_json = serde_json::to_string(&self.args)?;
        let record = serde_json::json!({
            "command": self.command,
            "args": self.args,
            "config_hash": sha256_hex(args_json.as_bytes()),
            "input_fingerprints": self.inputs,
            "seed": self.seed,
            "tool_version": container::TOOL_VERSION,
        });
        write_text(path, &format!("{}\n", serde_json::to_string_pretty(&record)?))
    }
}

/// Stable machine-readable error categories for the CLI error record.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::DimensionMismatch { .. } => "dimension-mismatch",
        Error::IndexOutOfRange { .. } => "index-out-of-range",
        Error::DegenerateVector { .. } => "degenerate-vector",
        Error::NonFinite { .. } => "non-finite",
        Error::TokenOutOfRange { .. } => "token-out-of-range",
        Error::SequenceTooLong { .. } => "sequence-too-long",
        Error::AlignmentMismatch { .. } => "alignment-mismatch",
        Error::EmptyDataset { .. } => "empty-dataset",
        Error::SampleTokenization { .. } => "sample-tokenization",
        Error::UnknownWord { .. } => "unknown-word",
        Error::KappaOutOfRange { .. } => "kappa-out-of-range",
        Error::ProvenanceMismatch { .. } => "provenance-mismatch",
        Error::LossModeMismatch { .. } => "loss-mode-mismatch",
        Error::DegenerateMask { .. } => "degenerate-mask",
        Error::FingerprintMismatch { .. } => "fingerprint-mismatch",
        Error::TraceMismatch { .. } => "trace-mismatch",
        Error::TraceNotCaptured => "trace-not-captured",
        Error::NonNormalizedRow { .. } => "non-normalized-row",
        Error::StreamTooShort { .. } => "stream-too-short",
        Error::InsufficientCorpus { .. } => "insufficient-corpus",
        Error::DatasetExample { .. } => "dataset-example",
        Error::Config(_) => "config",
        Error::Container(_) => "container",
        Error::RankOverflow { .. } => "rank-overflow",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}
