//! Subcommand definitions and dispatch, plus the input loaders the
//! subcommands share.

pub mod audit;
pub mod mitigate;
pub mod synth;
pub mod weat;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Context;
use clap::{Parser, Subcommand};

use biaslens_core::model::{parse_records, ColumnMap, Dataset, RecordFormat};

/// Exit code for a clean run with no findings.
pub const EXIT_CLEAN: i32 = 0;
/// Exit code for an operational failure (bad input, missing file, ...).
pub const EXIT_ERROR: i32 = 1;
/// Exit code for a successful run that raised bias flags, so pipelines can
/// tell "biased" from "broken".
pub const EXIT_FLAGGED: i32 = 2;

#[derive(Parser)]
#[command(
    name = "biaslens",
    version,
    about = "Bias audit toolkit: detect outcome and error disparities, diagnose their origins, and apply data-level countermeasures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Audit a prediction dataset and write report.json / report.md
    Audit(audit::AuditArgs),
    /// Apply a data-level countermeasure and print before/after divergence
    Mitigate(mitigate::MitigateArgs),
    /// Generate a synthetic bias scenario (source, target, reference files)
    Synth(synth::SynthArgs),
    /// Run one embedding-association probe and print its result
    Weat(weat::WeatArgs),
}

/// Run a parsed command line; the returned code is the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Audit(args) => audit::run(&args),
        Command::Mitigate(args) => mitigate::run(&args),
        Command::Synth(args) => synth::run(&args),
        Command::Weat(args) => weat::run(&args),
    }
}

/// Record format from an explicit flag, else the file extension
/// (.csv means CSV, anything else JSONL).
pub fn dataset_format(path: &Path, explicit: Option<&str>) -> anyhow::Result<RecordFormat> {
    match explicit {
        Some(name) => name.parse::<RecordFormat>().map_err(Into::into),
        None => Ok(match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => RecordFormat::Csv,
            _ => RecordFormat::Jsonl,
        }),
    }
}

pub fn load_dataset(
    path: &Path,
    format: RecordFormat,
    column_map: Option<&ColumnMap>,
) -> anyhow::Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_records(BufReader::new(file), format, column_map)
        .with_context(|| format!("parsing {}", path.display()))
}

/// Parse a TOML or JSON document into `T` (tried in that order, or picked by
/// the file extension when recognized).
pub fn load_document<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{e}")),
        Some("toml") => toml::from_str(&text).map_err(|e| anyhow::anyhow!("{e}")),
        _ => toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("{e}"))
            .or_else(|toml_err| {
                serde_json::from_str(&text)
                    .map_err(|json_err| anyhow::anyhow!("not TOML ({toml_err}) nor JSON ({json_err})"))
            }),
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}
