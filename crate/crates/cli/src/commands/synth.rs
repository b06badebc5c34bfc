//! Generate a synthetic bias scenario: source.jsonl, target.jsonl, and
//! reference.json (the trusted label reference plus scenario provenance),
//! written deterministically so reruns are byte-identical.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::json;

use biaslens_core::model::write_jsonl;
use biaslens_core::stats::IdealDistribution;
use biaslens_core::synth::{generate, ScenarioSpec};

use crate::atomic::write_atomic;

use super::EXIT_CLEAN;

#[derive(Args)]
pub struct SynthArgs {
    /// Scenario spec (TOML or JSON)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for source.jsonl, target.jsonl, reference.json
    #[arg(long)]
    pub out: PathBuf,
    /// Root seed override for the scenario
    #[arg(long)]
    pub seed: Option<u64>,
}

fn trusted_value(trusted: &IdealDistribution) -> serde_json::Value {
    match trusted {
        IdealDistribution::Explicit(tables) => json!({"kind": "explicit", "table": tables}),
        IdealDistribution::Uniform => json!({"kind": "uniform"}),
        IdealDistribution::Empirical(cond) => json!({"kind": "empirical", "cells": cond.cells}),
        IdealDistribution::TowardUniform { base, lambda } => {
            json!({"kind": "toward_uniform", "lambda": lambda, "cells": base.cells})
        }
    }
}

pub fn run(args: &SynthArgs) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut spec = ScenarioSpec::from_str(&text)
        .with_context(|| format!("parsing {}", args.scenario.display()))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }

    let data = generate(&spec)?;

    let mut source_bytes = Vec::new();
    write_jsonl(&data.source, &mut source_bytes)?;
    let mut target_bytes = Vec::new();
    write_jsonl(&data.target_reference, &mut target_bytes)?;
    let reference = json!({
        "trusted": trusted_value(&data.trusted_reference),
        "meta": data.meta,
    });
    let mut reference_text = serde_json::to_string_pretty(&reference)?;
    reference_text.push('\n');

    write_atomic(&args.out.join("source.jsonl"), &source_bytes)?;
    write_atomic(&args.out.join("target.jsonl"), &target_bytes)?;
    write_atomic(&args.out.join("reference.json"), reference_text.as_bytes())?;

    println!(
        "{}",
        serde_json::to_string(&json!({
            "out": args.out.display().to_string(),
            "n_source": data.source.records.len(),
            "n_target": data.target_reference.records.len(),
            "attribute": data.meta.attribute.name,
            "description": data.meta.description,
        }))?
    );
    Ok(EXIT_CLEAN)
}
