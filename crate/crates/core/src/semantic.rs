//! Embedding-level bias probes and mitigation: word-association tests,
//! masked log-probability measurement over an abstract scorer, and hard
//! de-biasing of embedding vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AuditConfig;
use crate::origins::{BiasOrigin, OriginFinding, DIAGNOSIS_CAVEAT};
use crate::rng::{derive_seed, replicate_seed, rng_for};
use crate::stats::{DivergenceKind, DivergenceResult};

/// Vocabulary-to-vector mapping with a shared dimensionality. Zero-norm
/// vectors are rejected up front so similarity queries are always defined.
#[derive(Clone, Debug)]
pub struct EmbeddingSet {
    dimension: usize,
    words: Vec<String>,
    index: BTreeMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDistribution("embedding set has no words".into()));
        }
        let dimension = entries[0].1.len();
        let mut set = EmbeddingSet {
            dimension,
            words: Vec::with_capacity(entries.len()),
            index: BTreeMap::new(),
            vectors: Vec::with_capacity(entries.len()),
        };
        for (word, vector) in entries {
            set.push(word, vector, None)?;
        }
        Ok(set)
    }

    fn push(&mut self, word: String, vector: Vec<f64>, line: Option<usize>) -> Result<()> {
        let fail = |message: String| match line {
            Some(line) => Error::Parse { line, message },
            None => Error::Validation(message),
        };
        if vector.len() != self.dimension {
            return Err(fail(format!(
                "vector for '{word}' has dimension {}, expected {}",
                vector.len(),
                self.dimension
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(fail(format!("vector for '{word}' has non-finite components")));
        }
        if norm(&vector) < 1e-12 {
            return Err(fail(format!("zero-norm vector for word '{word}'")));
        }
        if self.index.contains_key(&word) {
            return Err(fail(format!("duplicate word '{word}'")));
        }
        self.index.insert(word.clone(), self.vectors.len());
        self.words.push(word);
        self.vectors.push(vector);
        Ok(())
    }

    /// Read word2vec text format: one "word v1 … vd" line per word, with an
    /// optional leading "count dimension" header.
    pub fn load(reader: impl BufRead) -> Result<Self> {
        let mut set: Option<EmbeddingSet> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let word = parts.next().expect("non-empty line").to_string();
            let values: Vec<&str> = parts.collect();
            if i == 0 && values.len() == 1 {
                // Possible "count dimension" header.
                if word.parse::<u64>().is_ok() && values[0].parse::<u64>().is_ok() {
                    continue;
                }
            }
            let mut vector = Vec::with_capacity(values.len());
            for v in &values {
                vector.push(v.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("invalid vector component '{v}'"),
                })?);
            }
            if vector.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("no vector components for '{word}'"),
                });
            }
            match &mut set {
                None => {
                    let mut first = EmbeddingSet {
                        dimension: vector.len(),
                        words: Vec::new(),
                        index: BTreeMap::new(),
                        vectors: Vec::new(),
                    };
                    first.push(word, vector, Some(i + 1))?;
                    set = Some(first);
                }
                Some(set) => set.push(word, vector, Some(i + 1))?,
            }
        }
        set.ok_or_else(|| Error::EmptyDistribution("embedding stream has no words".into()))
    }

    /// Write word2vec text format with a "count dimension" header.
    pub fn save(&self, mut writer: impl Write) -> std::io::Result<()> {
        writeln!(writer, "{} {}", self.words.len(), self.dimension)?;
        for (word, vector) in self.words.iter().zip(&self.vectors) {
            write!(writer, "{word}")?;
            for v in vector {
                write!(writer, " {v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|i| self.vectors[*i].as_slice())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    fn require(&self, words: &[String], missing: &mut BTreeSet<String>) {
        for w in words {
            if !self.contains(w) {
                missing.insert(w.clone());
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// Word lists for one embedding association probe: two target sets X, Y and
/// two attribute sets A, B.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "X")]
    pub x: Vec<String>,
    #[serde(rename = "Y")]
    pub y: Vec<String>,
    #[serde(rename = "A")]
    pub a: Vec<String>,
    #[serde(rename = "B")]
    pub b: Vec<String>,
}

impl WeatSpec {
    fn validate(&self, emb: &EmbeddingSet) -> Result<()> {
        for (label, list) in [("X", &self.x), ("Y", &self.y), ("A", &self.a), ("B", &self.b)] {
            if list.is_empty() {
                return Err(Error::Validation(format!("word list {label} is empty")));
            }
        }
        let disjoint = |u: &[String], v: &[String]| u.iter().all(|w| !v.contains(w));
        if !disjoint(&self.x, &self.y) {
            return Err(Error::Validation("target lists X and Y overlap".into()));
        }
        if !disjoint(&self.a, &self.b) {
            return Err(Error::Validation("attribute lists A and B overlap".into()));
        }
        let mut missing = BTreeSet::new();
        for list in [&self.x, &self.y, &self.a, &self.b] {
            emb.require(list, &mut missing);
        }
        if !missing.is_empty() {
            return Err(Error::OutOfVocabulary(missing.into_iter().collect()));
        }
        Ok(())
    }

    fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("probe {}", index + 1))
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeatResult {
    pub effect_size: f64,
    pub p_value: f64,
}

/// Association score: mean cosine to A minus mean cosine to B.
fn association(w: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mean = |set: &[Vec<f64>]| set.iter().map(|v| cosine(w, v)).sum::<f64>() / set.len() as f64;
    mean(a) - mean(b)
}

/// Word-embedding association test: effect size is the standardized mean
/// association gap between the target sets; the one-sided p-value comes from
/// random equal-size re-partitions of the pooled targets (add-one rule).
pub fn weat(
    emb: &EmbeddingSet,
    spec: &WeatSpec,
    n_permutations: u32,
    seed: u64,
) -> Result<WeatResult> {
    spec.validate(emb)?;
    if spec.x.len() != spec.y.len() {
        return Err(Error::Validation(format!(
            "the permutation test needs equal target sizes, got |X| = {} and |Y| = {}",
            spec.x.len(),
            spec.y.len()
        )));
    }
    let gather = |words: &[String]| -> Vec<Vec<f64>> {
        words.iter().map(|w| emb.vector(w).expect("validated").to_vec()).collect()
    };
    let (a, b) = (gather(&spec.a), gather(&spec.b));
    let scores: Vec<f64> = spec
        .x
        .iter()
        .chain(&spec.y)
        .map(|w| association(emb.vector(w).expect("validated"), &a, &b))
        .collect();
    let nx = spec.x.len();
    let total = scores.len();
    let mean_x = scores[..nx].iter().sum::<f64>() / nx as f64;
    let mean_y = scores[nx..].iter().sum::<f64>() / nx as f64;
    let pooled_mean = scores.iter().sum::<f64>() / total as f64;
    let variance =
        scores.iter().map(|s| (s - pooled_mean).powi(2)).sum::<f64>() / total as f64;
    if variance.sqrt() < 1e-12 {
        return Err(Error::Degenerate(
            "association scores are identical across all target words; effect size undefined"
                .into(),
        ));
    }
    let effect_size = (mean_x - mean_y) / variance.sqrt();

    let observed: f64 = scores[..nx].iter().sum::<f64>() - scores[nx..].iter().sum::<f64>();
    let sum_all: f64 = scores.iter().sum();
    let stream = derive_seed(seed, "semantic.weat");
    let exceed: u32 = (0..n_permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(replicate_seed(stream, u64::from(i)));
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            let half: f64 = idx[..nx].iter().map(|j| scores[*j]).sum();
            let stat = 2.0 * half - sum_all;
            u32::from(stat >= observed - 1e-12)
        })
        .sum();
    let p_value = f64::from(1 + exceed) / f64::from(1 + n_permutations);
    Ok(WeatResult { effect_size, p_value })
}

pub const NOUN_SLOT: &str = "[NOUN]";
pub const PRON_SLOT: &str = "[PRON]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Template with a pronoun slot and a noun slot, e.g.
/// "[PRON] is a [NOUN]". The pronoun slot is always rendered as a mask for
/// the scorer; the noun slot is either filled or masked.
#[derive(Clone, Debug)]
pub struct TwoSlotTemplate {
    text: String,
}

impl TwoSlotTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for slot in [PRON_SLOT, NOUN_SLOT] {
            if text.matches(slot).count() != 1 {
                return Err(Error::Validation(format!(
                    "template must contain exactly one {slot} slot: '{text}'"
                )));
            }
        }
        Ok(TwoSlotTemplate { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn noun_filled(&self, noun: &str) -> String {
        self.text.replace(NOUN_SLOT, noun).replace(PRON_SLOT, MASK_TOKEN)
    }

    pub fn fully_masked(&self) -> String {
        self.text.replace(NOUN_SLOT, MASK_TOKEN).replace(PRON_SLOT, MASK_TOKEN)
    }
}

/// Anything that can score a candidate word for the masked slot of a
/// rendered template. Probabilities must lie in (0, 1].
pub trait MaskedScorer {
    fn score(&self, context: &str, candidate: &str) -> Result<f64>;
}

/// Deterministic lookup scorer for tests and demos: a base table gives
/// P(candidate | fully masked context) and an association table overrides it
/// when a known noun appears in the context.
#[derive(Clone, Debug, Default)]
pub struct ToyScorer {
    base: BTreeMap<String, f64>,
    assoc: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ToyScorer {
    pub fn new(
        base: BTreeMap<String, f64>,
        assoc: BTreeMap<String, BTreeMap<String, f64>>,
    ) -> Self {
        ToyScorer { base, assoc }
    }
}

impl MaskedScorer for ToyScorer {
    fn score(&self, context: &str, candidate: &str) -> Result<f64> {
        let tokens: BTreeSet<&str> = context
            .split(|c: char| !(c.is_alphanumeric() || c == '[' || c == ']'))
            .filter(|t| !t.is_empty())
            .collect();
        for (noun, probs) in &self.assoc {
            if tokens.contains(noun.as_str()) {
                if let Some(p) = probs.get(candidate) {
                    return Ok(*p);
                }
            }
        }
        self.base.get(candidate).copied().ok_or_else(|| {
            Error::Validation(format!("toy scorer has no probability for '{candidate}'"))
        })
    }
}

/// Masked log-probability bias: how much filling the noun slot raises the
/// pronoun's log probability relative to the fully masked template.
/// Positive values mean the noun pulls the pronoun in.
pub fn masked_logprob_bias(
    scorer: &dyn MaskedScorer,
    noun: &str,
    pronoun: &str,
    template: &TwoSlotTemplate,
) -> Result<f64> {
    let logprob = |context: String| -> Result<f64> {
        let p = scorer.score(&context, pronoun)?;
        if !(p > 0.0) {
            return Err(Error::Validation(format!(
                "scorer returned non-positive probability {p} for '{pronoun}'"
            )));
        }
        if p > 1.0 {
            return Err(Error::Validation(format!(
                "scorer returned probability {p} > 1 for '{pronoun}'"
            )));
        }
        Ok(p.ln())
    };
    Ok(logprob(template.noun_filled(noun))? - logprob(template.fully_masked())?)
}

/// First principal component of the difference vectors, by power iteration.
/// Sign is fixed so the direction aligns with the first nonzero difference.
fn principal_direction(differences: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = differences[0].len();
    let seed = differences.iter().find(|v| norm(v) > 1e-12).ok_or_else(|| {
        Error::Degenerate("all definitional pairs coincide; bias direction undefined".into())
    })?;
    let mut v: Vec<f64> = seed.iter().map(|x| x / norm(seed)).collect();
    for _ in 0..500 {
        // w = (D^T D) v computed as sum_i (d_i . v) d_i
        let mut w = vec![0.0; d];
        for diff in differences {
            let dot: f64 = diff.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wk, dk) in w.iter_mut().zip(diff) {
                *wk += dot * dk;
            }
        }
        let n = norm(&w);
        if n < 1e-12 {
            break;
        }
        for x in &mut w {
            *x /= n;
        }
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if delta < 1e-13 {
            break;
        }
    }
    if v.iter().zip(seed).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    Ok(v)
}

/// Remove a bias direction from the embedding space: the direction is the
/// first principal component of the definitional-pair differences; neutral
/// words lose their projection onto it (then renormalize to unit length);
/// equalize pairs are placed symmetrically about its orthogonal complement.
/// All other words pass through unchanged.
pub fn hard_debias(
    emb: &EmbeddingSet,
    definitional_pairs: &[(String, String)],
    neutral_words: &[String],
    equalize_pairs: &[(String, String)],
) -> Result<EmbeddingSet> {
    if definitional_pairs.is_empty() {
        return Err(Error::Validation("at least one definitional pair is required".into()));
    }
    let mut missing = BTreeSet::new();
    for (a, b) in definitional_pairs.iter().chain(equalize_pairs) {
        emb.require(&[a.clone(), b.clone()], &mut missing);
    }
    emb.require(neutral_words, &mut missing);
    if !missing.is_empty() {
        return Err(Error::OutOfVocabulary(missing.into_iter().collect()));
    }

    let differences: Vec<Vec<f64>> = definitional_pairs
        .iter()
        .map(|(a, b)| {
            let (va, vb) = (emb.vector(a).unwrap(), emb.vector(b).unwrap());
            va.iter().zip(vb).map(|(x, y)| x - y).collect()
        })
        .collect();
    let direction = principal_direction(&differences)?;
    let project = |v: &[f64]| -> f64 { v.iter().zip(&direction).map(|(a, b)| a * b).sum() };

    let mut out = emb.clone();
    for word in neutral_words {
        let i = out.index[word];
        let p = project(&out.vectors[i]);
        let mut v: Vec<f64> =
            out.vectors[i].iter().zip(&direction).map(|(x, g)| x - p * g).collect();
        let n = norm(&v);
        if n < 1e-12 {
            return Err(Error::Degenerate(format!(
                "neutral word '{word}' lies entirely along the bias direction"
            )));
        }
        for x in &mut v {
            *x /= n;
        }
        out.vectors[i] = v;
    }
    for (a, b) in equalize_pairs {
        let (ia, ib) = (out.index[a], out.index[b]);
        let mu: Vec<f64> = out.vectors[ia]
            .iter()
            .zip(&out.vectors[ib])
            .map(|(x, y)| (x + y) / 2.0)
            .collect();
        let mu_proj = project(&mu);
        let nu: Vec<f64> = mu.iter().zip(&direction).map(|(x, g)| x - mu_proj * g).collect();
        let span = (1.0 - norm(&nu).powi(2)).max(0.0).sqrt();
        for (i, fallback_sign) in [(ia, 1.0), (ib, -1.0)] {
            let z = project(&out.vectors[i]) - mu_proj;
            let sign = if z.abs() < 1e-12 { fallback_sign } else { z.signum() };
            out.vectors[i] = nu.iter().zip(&direction).map(|(x, g)| x + sign * span * g).collect();
        }
    }
    Ok(out)
}

/// Run every configured probe and package the overall outcome as a
/// semantic-bias finding: flagged iff any probe is both significant and has
/// |effect size| at least 0.5.
pub fn semantic_bias_finding(
    emb: &EmbeddingSet,
    specs: &[WeatSpec],
    config: &AuditConfig,
) -> Result<OriginFinding> {
    let caveat = DIAGNOSIS_CAVEAT.to_string();
    if specs.is_empty() {
        return Ok(OriginFinding {
            origin: BiasOrigin::SemanticBias,
            divergence: DivergenceResult {
                statistic: 0.0,
                per_cell: BTreeMap::new(),
                kind: DivergenceKind::WeatEffect,
            },
            p_value: 1.0,
            effect_size_nats: 0.0,
            flagged: false,
            evidence: "no probes configured".into(),
            caveat,
        });
    }
    let mut per_cell = BTreeMap::new();
    let mut lines = Vec::new();
    let mut headline: Option<(bool, f64, f64)> = None; // (flagged, |effect|, p)
    let mut flagged_any = false;
    for (i, spec) in specs.iter().enumerate() {
        let result = weat(
            emb,
            spec,
            config.n_permutations,
            derive_seed(config.seed, &format!("semantic.probe.{i}")),
        )?;
        let label = spec.label(i);
        let hit = result.p_value < config.alpha && result.effect_size.abs() >= 0.5;
        flagged_any |= hit;
        per_cell.insert(label.clone(), result.effect_size);
        lines.push(format!(
            "probe '{label}': effect size {:.3}, p {:.4}{}",
            result.effect_size,
            result.p_value,
            if hit { " (flagged)" } else { "" }
        ));
        let candidate = (hit, result.effect_size.abs(), result.p_value);
        let better = match &headline {
            None => true,
            Some((best_hit, best_abs, _)) => {
                (candidate.0, candidate.1) > (*best_hit, *best_abs)
            }
        };
        if better {
            headline = Some(candidate);
        }
    }
    let (_, abs_effect, p_value) = headline.expect("at least one spec");
    let statistic = per_cell
        .values()
        .copied()
        .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
        .unwrap_or(0.0);
    Ok(OriginFinding {
        origin: BiasOrigin::SemanticBias,
        divergence: DivergenceResult { statistic, per_cell, kind: DivergenceKind::WeatEffect },
        p_value,
        effect_size_nats: abs_effect,
        flagged: flagged_any,
        evidence: lines.join("; "),
        caveat,
    })
}
