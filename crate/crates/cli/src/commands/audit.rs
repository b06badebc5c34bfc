//! The audit pipeline: resolve the ideal, run both disparity checks and the
//! origin diagnosis per attribute, fold in embedding probes, and write
//! report.json / report.md atomically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use rayon::prelude::*;
use serde::Deserialize;

use biaslens_core::disparity::outcome_disparity;
use biaslens_core::disparity::error_disparity;
use biaslens_core::model::{
    AttributeSpec, AuditConfig, Dataset, IdealSpec, OutcomeKind, Split,
};
use biaslens_core::origins::{diagnose, TargetReference};
use biaslens_core::semantic::{semantic_bias_finding, EmbeddingSet};
use biaslens_core::stats::{
    estimate_conditional, IdealDistribution, OutcomeField, ProbTable, SplitFilter,
};

use crate::atomic;
use crate::report::{
    build_report, config_hash, render_markdown, report_timestamp, AttributeSection,
    ReportMetadata, REPORT_SCHEMA,
};
use crate::schema;

use super::{dataset_format, load_dataset, load_document, EXIT_CLEAN, EXIT_FLAGGED};

#[derive(Args)]
pub struct AuditArgs {
    /// Prediction records to audit (JSONL or CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Audit configuration (TOML or JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Target-population reference: a dataset (.jsonl/.csv) or an attribute
    /// marginal table (.json/.toml)
    #[arg(long = "target-ref")]
    pub target_ref: Option<PathBuf>,
    /// Trusted label reference: a dataset (.jsonl/.csv) or an ideal spec /
    /// per-cell label tables (.json/.toml)
    #[arg(long = "trusted-ref")]
    pub trusted_ref: Option<PathBuf>,
    /// Word embeddings (text format) for the semantic probes
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output directory for report.json and report.md
    #[arg(long)]
    pub out: PathBuf,
    /// Root seed; overrides BIASLENS_SEED and the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input format override for --data
    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub format: Option<String>,
}

/// Owned forms of the two optional references.
enum TargetRefData {
    Dataset(Dataset),
    Marginal(ProbTable),
}

impl TargetRefData {
    fn as_reference(&self) -> TargetReference<'_> {
        match self {
            TargetRefData::Dataset(ds) => TargetReference::Dataset(ds),
            TargetRefData::Marginal(table) => TargetReference::Marginal(table.clone()),
        }
    }
}

enum TrustedRefData {
    Dataset(Dataset),
    Spec(IdealSpec),
}

fn is_dataset_extension(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl") | Some("csv"))
}

fn load_target_ref(path: &Path, config: &AuditConfig) -> anyhow::Result<TargetRefData> {
    if is_dataset_extension(path) {
        let format = dataset_format(path, None)?;
        return Ok(TargetRefData::Dataset(load_dataset(path, format, config.csv.as_ref())?));
    }
    let table: BTreeMap<String, f64> = load_document(path)
        .with_context(|| "target reference must be a dataset (.jsonl/.csv) or a {cell: probability} table (.json/.toml)")?;
    Ok(TargetRefData::Marginal(table))
}

/// A synth scenario's reference.json wraps the trusted spec under "trusted".
#[derive(Deserialize)]
struct ReferenceDoc {
    trusted: IdealSpec,
}

fn load_trusted_ref(path: &Path, config: &AuditConfig) -> anyhow::Result<TrustedRefData> {
    if is_dataset_extension(path) {
        let format = dataset_format(path, None)?;
        return Ok(TrustedRefData::Dataset(load_dataset(path, format, config.csv.as_ref())?));
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = parse_trusted_spec(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(TrustedRefData::Spec(spec))
}

/// Accepts an ideal spec, a scenario reference document, or bare per-cell
/// label tables.
fn parse_trusted_spec(text: &str) -> anyhow::Result<IdealSpec> {
    if let Ok(spec) = toml::from_str::<IdealSpec>(text) {
        return Ok(spec);
    }
    if let Ok(spec) = serde_json::from_str::<IdealSpec>(text) {
        return Ok(spec);
    }
    if let Ok(doc) = serde_json::from_str::<ReferenceDoc>(text) {
        return Ok(doc.trusted);
    }
    if let Ok(doc) = toml::from_str::<ReferenceDoc>(text) {
        return Ok(doc.trusted);
    }
    if let Ok(table) = serde_json::from_str::<BTreeMap<String, BTreeMap<String, f64>>>(text) {
        return Ok(IdealSpec::Explicit { table });
    }
    if let Ok(table) = toml::from_str::<BTreeMap<String, BTreeMap<String, f64>>>(text) {
        return Ok(IdealSpec::Explicit { table });
    }
    bail!(
        "trusted reference must be an ideal spec, a scenario reference document, \
         or per-cell label tables"
    )
}

/// Trusted label distribution for one attribute.
fn trusted_distribution(
    trusted: &TrustedRefData,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> anyhow::Result<IdealDistribution> {
    match trusted {
        TrustedRefData::Dataset(ds) => Ok(IdealDistribution::empirical_from(
            ds,
            attribute,
            OutcomeField::YTrue,
            config.smoothing_alpha,
        )?),
        TrustedRefData::Spec(IdealSpec::Explicit { table }) => {
            Ok(IdealDistribution::Explicit(table.clone()))
        }
        TrustedRefData::Spec(IdealSpec::Uniform) => Ok(IdealDistribution::Uniform),
        TrustedRefData::Spec(_) => bail!(
            "trusted reference spec must be explicit tables or uniform; \
             empirical estimation needs a reference dataset"
        ),
    }
}

/// Resolve the configured ideal into a concrete distribution for one
/// attribute.
fn ideal_distribution(
    config: &AuditConfig,
    trusted: Option<&TrustedRefData>,
    data: &Dataset,
    attribute: &AttributeSpec,
) -> anyhow::Result<IdealDistribution> {
    match &config.ideal {
        IdealSpec::Uniform => Ok(IdealDistribution::Uniform),
        IdealSpec::Explicit { table } => Ok(IdealDistribution::Explicit(table.clone())),
        IdealSpec::EmpiricalFrom => match trusted {
            Some(t) => trusted_distribution(t, attribute, config),
            None => bail!("ideal kind 'empirical_from' needs --trusted-ref"),
        },
        IdealSpec::TowardUniform { lambda } => {
            let filter = if data.records.iter().any(|r| r.split == Split::Source) {
                SplitFilter::Source
            } else {
                SplitFilter::Both
            };
            let base = estimate_conditional(
                data,
                attribute,
                OutcomeField::YTrue,
                filter,
                config.smoothing_alpha,
            )?;
            Ok(IdealDistribution::TowardUniform { base, lambda: *lambda })
        }
    }
}

pub fn run(args: &AuditArgs) -> anyhow::Result<i32> {
    let config_bytes =
        std::fs::read(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = AuditConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    } else if let Ok(raw) = std::env::var("BIASLENS_SEED") {
        config.seed =
            raw.parse().context("BIASLENS_SEED must be an unsigned integer")?;
    }

    let format = dataset_format(&args.data, args.format.as_deref())?;
    let data = load_dataset(&args.data, format, config.csv.as_ref())?;
    let target = args
        .target_ref
        .as_deref()
        .map(|p| load_target_ref(p, &config))
        .transpose()?;
    let trusted = args
        .trusted_ref
        .as_deref()
        .map(|p| load_trusted_ref(p, &config))
        .transpose()?;
    let embeddings = args
        .embeddings
        .as_deref()
        .map(|p| -> anyhow::Result<EmbeddingSet> {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Ok(EmbeddingSet::load(BufReader::new(file))?)
        })
        .transpose()?;

    let mut warnings = Vec::new();
    if data.outcome_kind == OutcomeKind::Continuous {
        warnings.push(
            "outcome disparity skipped: continuous outcomes have no categorical \
             distribution to hold against the ideal; see the error-disparity check"
                .to_string(),
        );
    }
    if embeddings.is_none() && !config.weat.is_empty() {
        warnings.push(
            "embedding probes are configured but no --embeddings was supplied; \
             the semantic origin is unchecked"
                .to_string(),
        );
    }

    // one audit per configured attribute, merged back in config order
    let sections = config
        .attributes
        .par_iter()
        .map(|name| -> anyhow::Result<AttributeSection> {
            let attribute = data.resolved_attribute(&config, name)?;
            let outcome = match data.outcome_kind {
                OutcomeKind::Categorical => {
                    let ideal = ideal_distribution(&config, trusted.as_ref(), &data, &attribute)?;
                    Some(outcome_disparity(&data, &attribute, &ideal, &config)?)
                }
                OutcomeKind::Continuous => None,
            };
            let error = error_disparity(&data, &attribute, &config)?;
            let target_reference = target.as_ref().map(|t| t.as_reference());
            let trusted_dist = match (&trusted, data.outcome_kind) {
                (Some(t), OutcomeKind::Categorical) => {
                    Some(trusted_distribution(t, &attribute, &config)?)
                }
                _ => None,
            };
            let origins = diagnose(
                &data,
                target_reference.as_ref(),
                trusted_dist.as_ref(),
                None,
                &attribute,
                &config,
            )?;
            Ok(AttributeSection {
                attribute: name.clone(),
                outcome_disparity: outcome,
                error_disparity: error,
                origins,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let semantic = embeddings
        .as_ref()
        .map(|emb| semantic_bias_finding(emb, &config.weat, &config))
        .transpose()?;

    let metadata = ReportMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&config_bytes),
        seed: config.seed,
        timestamp: report_timestamp(),
    };
    let report = build_report(metadata, sections, semantic, warnings);

    let schema_doc: serde_json::Value =
        serde_json::from_str(REPORT_SCHEMA).context("parsing the shipped report schema")?;
    let report_value = serde_json::to_value(&report)?;
    let violations = schema::validate(&schema_doc, &report_value);
    if !violations.is_empty() {
        bail!("internal error: report does not validate against its schema: {violations:?}");
    }

    let mut json_text = serde_json::to_string_pretty(&report)?;
    json_text.push('\n');
    let md_text = render_markdown(&report);

    // stage both artifacts, then publish; an interrupted run leaves no
    // partial report under a final name
    let staged_json = atomic::stage(&args.out.join("report.json"), json_text.as_bytes())?;
    let staged_md = atomic::stage(&args.out.join("report.md"), md_text.as_bytes())?;
    staged_json.commit()?;
    staged_md.commit()?;

    Ok(if report.flagged { EXIT_FLAGGED } else { EXIT_CLEAN })
}
