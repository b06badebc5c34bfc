//! Run one embedding-association probe and print `{effect_size, p_value,
//! flagged}` to stdout. Exits 2 when the probe flags (significant p with a
//! large absolute effect), so pipelines can gate on it.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use serde_json::json;

use biaslens_core::semantic::{weat, EmbeddingSet, WeatSpec};

use super::{load_document, EXIT_CLEAN, EXIT_FLAGGED};

/// Flagging rule: significance plus a minimum absolute effect size.
pub const WEAT_ALPHA: f64 = 0.05;
pub const WEAT_EFFECT_FLOOR: f64 = 0.5;

#[derive(Args)]
pub struct WeatArgs {
    /// Word embeddings in text format
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Probe spec (TOML or JSON) with word lists X, Y, A, B
    #[arg(long)]
    pub spec: PathBuf,
    /// Permutation replicates for the p-value
    #[arg(long = "n-permutations", default_value_t = 1000)]
    pub n_permutations: u32,
    /// Seed for the permutation test
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &WeatArgs) -> anyhow::Result<i32> {
    let file = File::open(&args.embeddings)
        .with_context(|| format!("opening {}", args.embeddings.display()))?;
    let embeddings = EmbeddingSet::load(BufReader::new(file))?;
    let spec: WeatSpec = load_document(&args.spec)?;

    let result = weat(&embeddings, &spec, args.n_permutations, args.seed)?;
    let flagged = result.p_value < WEAT_ALPHA && result.effect_size.abs() >= WEAT_EFFECT_FLOOR;

    println!(
        "{}",
        serde_json::to_string(&json!({
            "effect_size": result.effect_size,
            "p_value": result.p_value,
            "flagged": flagged,
        }))?
    );
    Ok(if flagged { EXIT_FLAGGED } else { EXIT_CLEAN })
}
