//! Apply one data-level countermeasure to a dataset, write the result, and
//! print a before/after summary of the targeted divergence to stdout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde_json::json;

use biaslens_core::mitigate::{
    counterfactual_augment, matched_controls, poststratify_weights, stratified_resample,
    threshold_match, apply_weights, ResampleMode, SwapLexicon,
};
use biaslens_core::model::{
    write_jsonl, AttributeKind, AttributeSpec, AuditConfig, AttributeValue, Dataset,
    OutcomeValue, PredictionRecord,
};
use biaslens_core::stats::{
    attribute_marginal, kl_divergence, AttributeResolver, ProbTable, SplitFilter,
};

use crate::atomic::write_atomic;

use super::{dataset_format, load_dataset, load_document, EXIT_CLEAN};

pub const METHODS: &[&str] =
    &["augment", "downsample", "match-controls", "poststratify", "threshold", "upsample"];

#[derive(Args)]
pub struct MitigateArgs {
    /// Dataset to mitigate (JSONL or CSV)
    #[arg(long)]
    pub data: PathBuf,
    /// Countermeasure: poststratify | downsample | upsample | match-controls
    /// | augment | threshold
    #[arg(long)]
    pub method: String,
    /// Attribute the countermeasure targets (repeatable for match-controls)
    #[arg(long = "attribute")]
    pub attributes: Vec<String>,
    /// Target attribute marginal, a {cell: probability} table (.json/.toml)
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Swap lexicon for augment: two words per line
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Ideal per-cell positive rates for threshold, a {cell: rate} table;
    /// the key `*` applies to all cells
    #[arg(long)]
    pub rates: Option<PathBuf>,
    /// Gold label marking case records for match-controls
    #[arg(long = "case-label")]
    pub case_label: Option<String>,
    /// Seed for the resampling methods
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the mitigated dataset (JSONL) or result table (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// Input format override for --data
    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub format: Option<String>,
}

fn single_attribute<'a>(args: &'a MitigateArgs, method: &str) -> anyhow::Result<&'a str> {
    match args.attributes.as_slice() {
        [one] => Ok(one),
        [] => bail!("{method} needs --attribute"),
        _ => bail!("{method} takes exactly one --attribute"),
    }
}

fn required_path<'a>(
    path: &'a Option<PathBuf>,
    flag: &str,
    method: &str,
) -> anyhow::Result<&'a Path> {
    path.as_deref().ok_or_else(|| anyhow::anyhow!("{method} needs {flag}"))
}

/// Unsmoothed attribute marginal over the whole file.
fn raw_marginal(dataset: &Dataset, attribute: &AttributeSpec) -> anyhow::Result<ProbTable> {
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let (table, _) = attribute_marginal(dataset, &resolver, SplitFilter::Both, 0.0)?;
    Ok(table)
}

fn write_dataset(path: &Path, dataset: &Dataset) -> anyhow::Result<()> {
    let mut bytes = Vec::new();
    write_jsonl(dataset, &mut bytes)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn emit(summary: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}

pub fn run(args: &MitigateArgs) -> anyhow::Result<i32> {
    let format = dataset_format(&args.data, args.format.as_deref())?;
    let data = load_dataset(&args.data, format, None)?;

    match args.method.as_str() {
        "poststratify" => poststratify(args, &data),
        "downsample" => resample(args, &data, ResampleMode::Down),
        "upsample" => resample(args, &data, ResampleMode::UpWithReplacement),
        "match-controls" => match_controls(args, &data),
        "augment" => augment(args, &data),
        "threshold" => threshold(args, &data),
        other => bail!(
            "unknown countermeasure '{other}'; valid names: {}",
            METHODS.join(", ")
        ),
    }
}

fn resolved(data: &Dataset, name: &str) -> anyhow::Result<AttributeSpec> {
    // a throwaway config: mitigation runs standalone, without an audit config
    let stub = AuditConfig::for_attributes(vec![name.to_string()]);
    Ok(data.resolved_attribute(&stub, name)?)
}

fn poststratify(args: &MitigateArgs, data: &Dataset) -> anyhow::Result<i32> {
    let name = single_attribute(args, "poststratify")?;
    let target_path = required_path(&args.target, "--target", "poststratify")?;
    let target: ProbTable = load_document(target_path)?;
    let attribute = resolved(data, name)?;

    let before_marginal = raw_marginal(data, &attribute)?;
    let assignment = poststratify_weights(&before_marginal, &target)?;
    let weighted = apply_weights(data, &attribute, &assignment)?;
    let after_marginal = raw_marginal(&weighted, &attribute)?;

    let before = kl_divergence(&before_marginal, &target)?;
    let after = kl_divergence(&after_marginal, &target)?;
    write_dataset(&args.out, &weighted)?;
    emit(&json!({
        "method": "poststratify",
        "metric": "kl_nats",
        "before": before,
        "after": after,
        "weights": assignment.weights,
        "out": args.out.display().to_string(),
    }))?;
    Ok(EXIT_CLEAN)
}

fn resample(args: &MitigateArgs, data: &Dataset, mode: ResampleMode) -> anyhow::Result<i32> {
    let method = match mode {
        ResampleMode::Down => "downsample",
        ResampleMode::UpWithReplacement => "upsample",
    };
    let name = single_attribute(args, method)?;
    let target_path = required_path(&args.target, "--target", method)?;
    let target: ProbTable = load_document(target_path)?;
    let attribute = resolved(data, name)?;

    let before_marginal = raw_marginal(data, &attribute)?;
    let resampled = stratified_resample(data, &attribute, &target, mode, args.seed)?;
    let after_marginal = raw_marginal(&resampled, &attribute)?;

    let before = kl_divergence(&before_marginal, &target)?;
    let after = kl_divergence(&after_marginal, &target)?;
    write_dataset(&args.out, &resampled)?;
    emit(&json!({
        "method": method,
        "metric": "kl_nats",
        "before": before,
        "after": after,
        "n_before": data.records.len(),
        "n_after": resampled.records.len(),
        "out": args.out.display().to_string(),
    }))?;
    Ok(EXIT_CLEAN)
}

/// Worst per-attribute gap between the case and control distributions:
/// standardized mean gap for continuous attributes, total variation distance
/// for categorical ones.
fn balance_gap(
    cases: &[PredictionRecord],
    controls: &[PredictionRecord],
    attributes: &[AttributeSpec],
) -> f64 {
    let mut worst = 0.0f64;
    for attribute in attributes {
        let gap = match attribute.kind {
            AttributeKind::Continuous => {
                let values = |recs: &[PredictionRecord]| -> Vec<f64> {
                    recs.iter()
                        .filter_map(|r| match r.attrs.get(&attribute.name) {
                            Some(AttributeValue::Continuous(v)) => Some(*v),
                            _ => None,
                        })
                        .collect()
                };
                let (a, b) = (values(cases), values(controls));
                if a.is_empty() || b.is_empty() {
                    continue;
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let (ma, mb) = (mean(&a), mean(&b));
                let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
                let mp = mean(&pooled);
                let var =
                    pooled.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / pooled.len() as f64;
                if var <= 0.0 {
                    0.0
                } else {
                    (ma - mb).abs() / var.sqrt()
                }
            }
            AttributeKind::Categorical => {
                let freqs = |recs: &[PredictionRecord]| -> BTreeMap<String, f64> {
                    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
                    let mut total = 0.0;
                    for rec in recs {
                        if let Some(AttributeValue::Categorical(v)) = rec.attrs.get(&attribute.name)
                        {
                            *counts.entry(v.clone()).or_default() += 1.0;
                            total += 1.0;
                        }
                    }
                    if total > 0.0 {
                        for v in counts.values_mut() {
                            *v /= total;
                        }
                    }
                    counts
                };
                let (fa, fb) = (freqs(cases), freqs(controls));
                let keys: std::collections::BTreeSet<&String> =
                    fa.keys().chain(fb.keys()).collect();
                0.5 * keys
                    .iter()
                    .map(|k| {
                        (fa.get(*k).copied().unwrap_or(0.0) - fb.get(*k).copied().unwrap_or(0.0))
                            .abs()
                    })
                    .sum::<f64>()
            }
        };
        worst = worst.max(gap);
    }
    worst
}

fn match_controls(args: &MitigateArgs, data: &Dataset) -> anyhow::Result<i32> {
    if args.attributes.is_empty() {
        bail!("match-controls needs at least one --attribute");
    }
    let case_label = args
        .case_label
        .as_deref()
        .context("match-controls needs --case-label naming the case gold label")?;

    let (cases, controls): (Vec<PredictionRecord>, Vec<PredictionRecord>) = data
        .records
        .iter()
        .cloned()
        .partition(|r| r.y_true.as_label() == Some(case_label));
    if cases.is_empty() {
        bail!("no records carry the case label '{case_label}'");
    }
    if controls.is_empty() {
        bail!("every record carries the case label '{case_label}'; no control pool");
    }

    let attributes = args
        .attributes
        .iter()
        .map(|name| resolved(data, name))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let before = balance_gap(&cases, &controls, &attributes);
    let result = matched_controls(&cases, &controls, &attributes, args.seed)?;
    let after = balance_gap(&cases, &result.selected, &attributes);

    let mut records = cases;
    records.extend(result.selected);
    let matched = Dataset::new(records)?;
    write_dataset(&args.out, &matched)?;
    emit(&json!({
        "method": "match-controls",
        "metric": "max_balance_gap",
        "before": before,
        "after": after,
        "shortfall": result.shortfall,
        "warnings": result.warnings,
        "out": args.out.display().to_string(),
    }))?;
    Ok(EXIT_CLEAN)
}

/// Word counts over every record's text, using the same token rule as the
/// swap itself: runs of alphanumerics plus apostrophes, lowercased.
fn token_counts(dataset: &Dataset) -> BTreeMap<String, u64> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for rec in &dataset.records {
        let Some(text) = &rec.text else { continue };
        let mut token = String::new();
        for ch in text.chars().chain(std::iter::once(' ')) {
            if ch.is_alphanumeric() || ch == '\'' {
                token.push(ch);
            } else if !token.is_empty() {
                *counts.entry(token.to_lowercase()).or_default() += 1;
                token.clear();
            }
        }
    }
    counts
}

fn pair_imbalance(dataset: &Dataset, lexicon: &SwapLexicon) -> u64 {
    let counts = token_counts(dataset);
    lexicon
        .pairs()
        .iter()
        .map(|(a, b)| {
            counts.get(a).copied().unwrap_or(0).abs_diff(counts.get(b).copied().unwrap_or(0))
        })
        .sum()
}

fn augment(args: &MitigateArgs, data: &Dataset) -> anyhow::Result<i32> {
    let lexicon_path = required_path(&args.lexicon, "--lexicon", "augment")?;
    let file =
        File::open(lexicon_path).with_context(|| format!("opening {}", lexicon_path.display()))?;
    let lexicon = SwapLexicon::from_reader(BufReader::new(file))?;

    let before = pair_imbalance(data, &lexicon);
    let augmented = counterfactual_augment(data, &lexicon, None)?;
    let after = pair_imbalance(&augmented, &lexicon);

    write_dataset(&args.out, &augmented)?;
    emit(&json!({
        "method": "augment",
        "metric": "token_imbalance",
        "before": before,
        "after": after,
        "n_before": data.records.len(),
        "n_after": augmented.records.len(),
        "out": args.out.display().to_string(),
    }))?;
    Ok(EXIT_CLEAN)
}

fn threshold(args: &MitigateArgs, data: &Dataset) -> anyhow::Result<i32> {
    let name = single_attribute(args, "threshold")?;
    let rates_path = required_path(&args.rates, "--rates", "threshold")?;
    let attribute = resolved(data, name)?;
    let resolver = AttributeResolver::build(&attribute, &[data])?;

    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in &data.records {
        let OutcomeValue::Value(score) = &rec.y_pred else {
            bail!("threshold matching needs continuous prediction scores in y_pred");
        };
        if let Some(cell) = resolver.cell_index(rec) {
            scores.entry(resolver.labels()[cell].clone()).or_default().push(*score);
        }
    }
    if scores.is_empty() {
        bail!("no records carry attribute '{name}'");
    }

    let raw_rates: BTreeMap<String, f64> = load_document(rates_path)?;
    let rates: BTreeMap<String, f64> = match raw_rates.get("*") {
        Some(default) => scores.keys().map(|cell| (cell.clone(), *default)).collect(),
        None => raw_rates,
    };

    let result = threshold_match(&scores, &rates)?;

    // baseline: one pooled threshold chosen for the weighted overall rate
    let total: usize = scores.values().map(Vec::len).sum();
    let pooled_rate: f64 = rates
        .iter()
        .map(|(cell, rate)| rate * scores[cell].len() as f64)
        .sum::<f64>()
        / total as f64;
    let pooled: Vec<f64> = scores.values().flatten().copied().collect();
    let pooled_result = threshold_match(
        &BTreeMap::from([("*".to_string(), pooled)]),
        &BTreeMap::from([("*".to_string(), pooled_rate)]),
    )?;
    let pooled_threshold = pooled_result.thresholds["*"];

    let gap = |cell: &str, achieved: f64| (achieved - rates[cell]).abs();
    let before = rates
        .keys()
        .map(|cell| {
            let values = &scores[cell];
            let admitted = values.iter().filter(|s| **s >= pooled_threshold).count();
            gap(cell, admitted as f64 / values.len() as f64)
        })
        .fold(0.0f64, f64::max);
    let after = result
        .achieved_rates
        .iter()
        .map(|(cell, achieved)| gap(cell, *achieved))
        .fold(0.0f64, f64::max);

    let mut out_text = serde_json::to_string_pretty(&result)?;
    out_text.push('\n');
    write_atomic(&args.out, out_text.as_bytes())?;
    emit(&json!({
        "method": "threshold",
        "metric": "max_rate_gap",
        "before": before,
        "after": after,
        "thresholds": result.thresholds,
        "out": args.out.display().to_string(),
    }))?;
    Ok(EXIT_CLEAN)
}
