//! Command-line entry point: `tokenize`, `parse`, `train`, `explain`.
//!
//! Thin wrappers over the library modules with three invariants:
//!
//! - **Exit codes**: 0 success, 1 runtime failure (bad SMILES, IO, training
//!   errors), 2 usage or config errors (including anything clap rejects).
//! - **Manifest first**: every command that writes artifacts first writes a
//!   `run_manifest.json` capturing the tool version, the full config
//!   snapshot, all seeds, and SHA-256 digests of the inputs — enough to
//!   reproduce the run byte-identically with the same binary.
//! - **No partial artifacts**: results are computed in memory before any
//!   file is touched, and each file lands via write-to-temp plus atomic
//!   rename.

mod commands;
mod config;

pub use commands::{cmd_explain, cmd_parse, cmd_tokenize, cmd_train};
pub use config::{load_config, DataSection, ModelSection, RunConfig, SchemaKind, TrainSection};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::training::SuiteMode;

/// A command failure, classified for the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// The invocation or config is wrong; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// The work itself failed; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// Classify an error as a runtime failure.
    pub fn runtime(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "molgrad",
    version,
    about = "Attention-gradient relevance for chemical language models",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// What varies across suite runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    /// Re-seed the data split each run.
    Data,
    /// Re-seed parameter initialization each run.
    Model,
}

impl From<SuiteArg> for SuiteMode {
    fn from(arg: SuiteArg) -> Self {
        match arg {
            SuiteArg::Data => SuiteMode::Data,
            SuiteArg::Model => SuiteMode::Model,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a SMILES string into tokens.
    Tokenize {
        /// The SMILES string.
        smiles: String,
    },
    /// Parse a SMILES string and print its molecular graph.
    Parse {
        /// The SMILES string.
        smiles: String,
    },
    /// Train a model from a TOML config file.
    Train {
        /// Path to the config file.
        config: PathBuf,
        /// Run an N-seed suite and print a mean ± SE table instead of a
        /// single run.
        #[arg(long, value_name = "N")]
        suite: Option<usize>,
        /// What the suite varies.
        #[arg(long, value_enum, default_value_t = SuiteArg::Data)]
        suite_mode: SuiteArg,
    },
    /// Explain one prediction: relevance JSON plus SVG figures.
    Explain {
        /// Path to a trained checkpoint.
        checkpoint: PathBuf,
        /// Solute SMILES.
        smiles: String,
        /// Solvent SMILES, appended after <SEP>.
        #[arg(long)]
        solvent: Option<String>,
        /// Temperature in kelvin (required by temperature-aware
        /// checkpoints).
        #[arg(long)]
        temp: Option<f64>,
        /// Output directory for the JSON and SVG artifacts.
        #[arg(long, default_value = "explain-out")]
        out: PathBuf,
    },
}

/// Parse `std::env` arguments, run, and report the exit code.
pub fn run() -> ExitCode {
    ExitCode::from(run_with_args(std::env::args_os(), &mut std::io::stdout()))
}

/// Run with explicit arguments and stdout — the testable entry point.
/// Errors print to stderr; the return value is the process exit code.
pub fn run_with_args<I, T>(args: I, stdout: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Clap prints help/version to stdout (exit 0) and usage errors
            // to stderr (exit 2) on its own.
            let _ = err.print();
            return u8::try_from(err.exit_code()).unwrap_or(2);
        }
    };
    let result = match cli.command {
        Command::Tokenize { smiles } => cmd_tokenize(&smiles, stdout),
        Command::Parse { smiles } => cmd_parse(&smiles, stdout),
        Command::Train { config, suite, suite_mode } => {
            cmd_train(&config, suite, suite_mode.into(), stdout)
        }
        Command::Explain { checkpoint, smiles, solvent, temp, out } => {
            cmd_explain(&checkpoint, &smiles, solvent.as_deref(), temp, &out, stdout)
        }
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// One hashed input file.
#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    /// Path as given on the command line or in the config.
    pub path: String,
    /// SHA-256 of the file's bytes, lowercase hex.
    pub sha256: String,
}

/// The reproducibility record written before any other artifact.
///
/// Everything that influenced the run is in here — resolved config, seeds,
/// input digests — and nothing volatile (no timestamps, no hostnames), so
/// re-running with the same tool version and inputs rewrites every artifact
/// byte-identically.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    /// Manifest layout version.
    pub schema_version: u32,
    /// This binary's crate version.
    pub tool_version: &'static str,
    /// Which subcommand ran.
    pub command: String,
    /// Full resolved configuration (file contents or CLI arguments).
    pub config: serde_json::Value,
    /// Every seed in play, by name.
    pub seeds: serde_json::Value,
    /// SHA-256 digests of input files.
    pub inputs: Vec<InputDigest>,
    /// Artifacts this run writes, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Current manifest layout.
    pub const SCHEMA_VERSION: u32 = 1;

    fn new(command: &str, config: serde_json::Value, seeds: serde_json::Value) -> Self {
        RunManifest {
            schema_version: Self::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// SHA-256 of a file, lowercase hex.
fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Serialize as pretty JSON and write atomically.
fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    crate::encoder::atomic_write(path, &bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Write text atomically.
fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    crate::encoder::atomic_write(path, text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
    }

    #[test]
    fn sha256_matches_a_known_vector() {
        let mut file = tempfile::NamedTempFile::new().expect("temp file");
        use std::io::Write as _;
        file.write_all(b"abc").expect("write");
        // NIST FIPS 180-2 test vector for "abc".
        assert_eq!(
            sha256_file(file.path()).expect("hashes"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn unknown_subcommand_exits_2() {
        let mut out = Vec::new();
        assert_eq!(run_with_args(["molgrad", "frobnicate"], &mut out), 2);
    }

    #[test]
    fn manifest_serializes_without_volatile_fields() {
        let manifest = RunManifest::new(
            "train",
            serde_json::json!({"data": {"dataset": "x.csv"}}),
            serde_json::json!({"model": 0, "data": 1}),
        );
        let text = serde_json::to_string(&manifest).expect("serializes");
        assert!(text.contains("\"schema_version\":1"));
        assert!(text.contains("\"tool_version\""));
        assert!(!text.to_lowercase().contains("time"));
    }
}
