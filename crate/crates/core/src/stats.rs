//! Distribution estimation, divergence measures, and seeded resampling
//! significance tests.
//!
//! Conventions used throughout:
//! - all divergences are in nats (natural log);
//! - `0 * ln(0 / p) = 0`;
//! - additive smoothing turns counts into `(c + alpha) / (n + alpha * K)`;
//! - resampling p-values use the add-one rule `(1 + exceed) / (1 + n)` and so
//!   are never zero;
//! - every replicate generator is derived from (seed, operation name,
//!   replicate index), making results independent of record order and thread
//!   schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    AttributeKind, AttributeSpec, AttributeValue, BinningSpec, Dataset, OutcomeKind,
    PredictionRecord, Split,
};
use crate::rng::{derive_seed, replicate_seed, rng_for};

/// Probability table: outcome (or cell) label to probability.
pub type ProbTable = BTreeMap<String, f64>;

/// Which outcome variable a distribution is estimated over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeField {
    YTrue,
    YPred,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitFilter {
    Source,
    Target,
    Both,
}

impl SplitFilter {
    fn admits(self, split: Split) -> bool {
        matches!(
            (self, split),
            (SplitFilter::Both, _)
                | (SplitFilter::Source, Split::Source)
                | (SplitFilter::Target, Split::Target)
        )
    }
}

pub const ERROR_LABEL: &str = "error";
pub const CORRECT_LABEL: &str = "correct";

/// Maps records to attribute cells. Categorical attributes use the observed
/// categories; continuous attributes use their binning spec. Build it over
/// every dataset that takes part in a comparison so the cell set is shared.
#[derive(Clone, Debug)]
pub struct AttributeResolver {
    pub name: String,
    kind: ResolverKind,
}

#[derive(Clone, Debug)]
enum ResolverKind {
    Categorical { labels: Vec<String> },
    /// Interior edges; bin i is [edges[i-1], edges[i]) with open outer bins.
    Quantile { edges: Vec<f64>, labels: Vec<String> },
    /// Full boundary list; values outside [first, last] have no cell.
    Fixed { edges: Vec<f64>, labels: Vec<String> },
}

fn fmt_edge(v: f64) -> String {
    format!("{v}")
}

impl AttributeResolver {
    pub fn build(spec: &AttributeSpec, datasets: &[&Dataset]) -> Result<Self> {
        match spec.kind {
            AttributeKind::Categorical => {
                let mut labels: Vec<String> = Vec::new();
                for ds in datasets {
                    for rec in &ds.records {
                        if let Some(AttributeValue::Categorical(v)) = rec.attrs.get(&spec.name) {
                            if !labels.contains(v) {
                                labels.push(v.clone());
                            }
                        }
                    }
                }
                labels.sort();
                Ok(AttributeResolver {
                    name: spec.name.clone(),
                    kind: ResolverKind::Categorical { labels },
                })
            }
            AttributeKind::Continuous => match &spec.binning {
                None => Err(Error::Validation(format!(
                    "continuous attribute '{}' needs a binning spec before distribution estimation",
                    spec.name
                ))),
                Some(BinningSpec::FixedEdges { edges }) => {
                    let labels = (0..edges.len() - 1)
                        .map(|i| {
                            let close = if i + 2 == edges.len() { "]" } else { ")" };
                            format!("[{},{}{close}", fmt_edge(edges[i]), fmt_edge(edges[i + 1]))
                        })
                        .collect();
                    Ok(AttributeResolver {
                        name: spec.name.clone(),
                        kind: ResolverKind::Fixed { edges: edges.clone(), labels },
                    })
                }
                Some(BinningSpec::Quantile { n_bins }) => {
                    let mut values: Vec<f64> = Vec::new();
                    for ds in datasets {
                        for rec in &ds.records {
                            if let Some(AttributeValue::Continuous(v)) = rec.attrs.get(&spec.name)
                            {
                                values.push(*v);
                            }
                        }
                    }
                    if values.is_empty() {
                        return Err(Error::EmptyDistribution(format!(
                            "no values observed for continuous attribute '{}'",
                            spec.name
                        )));
                    }
                    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mut edges: Vec<f64> = Vec::new();
                    for i in 1..*n_bins {
                        let idx = (values.len() * i) / *n_bins;
                        let e = values[idx.min(values.len() - 1)];
                        if edges.last() != Some(&e) && e > values[0] {
                            edges.push(e);
                        }
                    }
                    let mut labels = Vec::with_capacity(edges.len() + 1);
                    if edges.is_empty() {
                        labels.push("(-inf,inf)".to_string());
                    } else {
                        labels.push(format!("(-inf,{})", fmt_edge(edges[0])));
                        for w in edges.windows(2) {
                            labels.push(format!("[{},{})", fmt_edge(w[0]), fmt_edge(w[1])));
                        }
                        labels.push(format!("[{},inf)", fmt_edge(edges[edges.len() - 1])));
                    }
                    Ok(AttributeResolver {
                        name: spec.name.clone(),
                        kind: ResolverKind::Quantile { edges, labels },
                    })
                }
            },
        }
    }

    pub fn labels(&self) -> &[String] {
        match &self.kind {
            ResolverKind::Categorical { labels } => labels,
            ResolverKind::Quantile { labels, .. } => labels,
            ResolverKind::Fixed { labels, .. } => labels,
        }
    }

    /// Cell index for a record, or None when the attribute is missing or the
    /// value falls outside fixed bin edges.
    pub fn cell_index(&self, rec: &PredictionRecord) -> Option<usize> {
        match (&self.kind, rec.attrs.get(&self.name)) {
            (ResolverKind::Categorical { labels }, Some(AttributeValue::Categorical(v))) => {
                labels.binary_search(v).ok()
            }
            (ResolverKind::Quantile { edges, .. }, Some(AttributeValue::Continuous(v))) => {
                Some(edges.partition_point(|e| *e <= *v))
            }
            (ResolverKind::Fixed { edges, labels }, Some(AttributeValue::Continuous(v))) => {
                let (first, last) = (edges[0], edges[edges.len() - 1]);
                if *v < first || *v > last {
                    None
                } else if *v == last {
                    Some(labels.len() - 1)
                } else {
                    Some(edges.partition_point(|e| *e <= *v) - 1)
                }
            }
            _ => None,
        }
    }
}

/// Records of one split mapped onto attribute cells, sorted by record id so
/// downstream resampling is invariant to input order.
#[derive(Debug)]
pub struct CellAssignment<'a> {
    pub attribute: String,
    pub labels: Vec<String>,
    pub cells: Vec<u32>,
    pub records: Vec<&'a PredictionRecord>,
    pub excluded: usize,
}

pub fn assign_cells<'a>(
    records: impl IntoIterator<Item = &'a PredictionRecord>,
    resolver: &AttributeResolver,
) -> CellAssignment<'a> {
    let mut paired: Vec<(usize, &PredictionRecord)> = Vec::new();
    let mut excluded = 0usize;
    for rec in records {
        match resolver.cell_index(rec) {
            Some(idx) => paired.push((idx, rec)),
            None => excluded += 1,
        }
    }
    paired.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    CellAssignment {
        attribute: resolver.name.clone(),
        labels: resolver.labels().to_vec(),
        cells: paired.iter().map(|(i, _)| *i as u32).collect(),
        records: paired.into_iter().map(|(_, r)| r).collect(),
        excluded,
    }
}

/// Additive smoothing: prob = (count + alpha) / (n + alpha * K).
pub fn smooth_probs(counts: &[f64], alpha: f64) -> Vec<f64> {
    let n: f64 = counts.iter().sum();
    let k = counts.len() as f64;
    let denom = n + alpha * k;
    if denom <= 0.0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|c| (c + alpha) / denom).collect()
}

/// Per-cell outcome distribution for one attribute.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionalDistribution {
    pub attribute: String,
    pub outcome_support: Vec<String>,
    pub cells: BTreeMap<String, CellDistribution>,
    pub smoothing_alpha: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellDistribution {
    /// Total record weight in the cell before smoothing.
    pub n: f64,
    pub probs: ProbTable,
}

fn outcome_label(rec: &PredictionRecord, field: OutcomeField) -> Result<String> {
    let value = match field {
        OutcomeField::YTrue => &rec.y_true,
        OutcomeField::YPred => &rec.y_pred,
        OutcomeField::Error => {
            let correct = rec.y_true == rec.y_pred;
            return Ok(if correct { CORRECT_LABEL } else { ERROR_LABEL }.to_string());
        }
    };
    value
        .as_label()
        .map(str::to_string)
        .ok_or_else(|| Error::Validation("continuous outcomes have no categorical distribution; bin the outcome or use the error-disparity path".into()))
}

fn field_support(dataset: &Dataset, field: OutcomeField) -> Result<Vec<String>> {
    match field {
        OutcomeField::Error => Ok(vec![CORRECT_LABEL.to_string(), ERROR_LABEL.to_string()]),
        _ => {
            if dataset.outcome_kind == OutcomeKind::Continuous {
                return Err(Error::Validation(
                    "continuous outcomes have no categorical distribution; bin the outcome or use the error-disparity path".into(),
                ));
            }
            Ok(dataset.outcome_support())
        }
    }
}

/// Estimate the outcome distribution conditioned on attribute cells, with
/// additive smoothing over the dataset-wide outcome support. Records missing
/// the attribute are skipped; cells present in the attribute's cell set but
/// empty after filtering are kept (uniform under smoothing) unless alpha = 0.
pub fn estimate_conditional(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    field: OutcomeField,
    split: SplitFilter,
    smoothing_alpha: f64,
) -> Result<ConditionalDistribution> {
    if smoothing_alpha < 0.0 || !smoothing_alpha.is_finite() {
        return Err(Error::Validation(format!(
            "smoothing_alpha must be finite and non-negative, got {smoothing_alpha}"
        )));
    }
    let support = field_support(dataset, field)?;
    if support.is_empty() {
        return Err(Error::EmptyDistribution("no outcomes observed".into()));
    }
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let labels = resolver.labels().to_vec();
    if labels.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "attribute '{}' has no observed cells",
            attribute.name
        )));
    }

    let support_index: BTreeMap<&str, usize> =
        support.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut counts = vec![0.0f64; labels.len() * support.len()];
    let mut totals = vec![0.0f64; labels.len()];
    let mut any = false;
    for rec in dataset.records.iter().filter(|r| split.admits(r.split)) {
        let Some(cell) = resolver.cell_index(rec) else { continue };
        let label = outcome_label(rec, field)?;
        let outcome = *support_index.get(label.as_str()).expect("support covers outcomes");
        counts[cell * support.len() + outcome] += rec.weight;
        totals[cell] += rec.weight;
        any = true;
    }
    if !any {
        return Err(Error::EmptyDistribution(format!(
            "no records for attribute '{}' after split filter",
            attribute.name
        )));
    }

    let mut cells = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        if totals[i] == 0.0 && smoothing_alpha == 0.0 {
            continue;
        }
        let row = &counts[i * support.len()..(i + 1) * support.len()];
        let probs = smooth_probs(row, smoothing_alpha);
        cells.insert(
            label.clone(),
            CellDistribution {
                n: totals[i],
                probs: support.iter().cloned().zip(probs).collect(),
            },
        );
    }
    Ok(ConditionalDistribution {
        attribute: attribute.name.clone(),
        outcome_support: support,
        cells,
        smoothing_alpha,
    })
}

/// Weighted marginal of attribute cells, smoothed.
pub fn attribute_marginal(
    dataset: &Dataset,
    resolver: &AttributeResolver,
    split: SplitFilter,
    smoothing_alpha: f64,
) -> Result<(ProbTable, f64)> {
    let labels = resolver.labels();
    if labels.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "attribute '{}' has no observed cells",
            resolver.name
        )));
    }
    let mut counts = vec![0.0f64; labels.len()];
    for rec in dataset.records.iter().filter(|r| split.admits(r.split)) {
        if let Some(cell) = resolver.cell_index(rec) {
            counts[cell] += rec.weight;
        }
    }
    let n: f64 = counts.iter().sum();
    if n == 0.0 {
        return Err(Error::EmptyDistribution(format!(
            "no records carry attribute '{}' after split filter",
            resolver.name
        )));
    }
    let probs = smooth_probs(&counts, smoothing_alpha);
    Ok((labels.iter().cloned().zip(probs).collect(), n))
}

fn check_table(t: &ProbTable, name: &str) -> Result<()> {
    if t.is_empty() {
        return Err(Error::EmptyDistribution(format!("{name} table is empty")));
    }
    let mut sum = 0.0;
    for (k, p) in t {
        if !(p.is_finite() && *p >= 0.0) {
            return Err(Error::Validation(format!(
                "{name} table has invalid probability {p} for '{k}'"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("{name} table sums to {sum}, expected 1")));
    }
    Ok(())
}

/// KL divergence KL(q || p) in nats. Zero q entries contribute nothing;
/// a positive q entry with zero (or missing) p probability is an error.
pub fn kl_divergence(q: &ProbTable, p: &ProbTable) -> Result<f64> {
    check_table(q, "first")?;
    check_table(p, "second")?;
    let mut sum = 0.0;
    for (k, qv) in q {
        if *qv == 0.0 {
            continue;
        }
        match p.get(k) {
            Some(pv) if *pv > 0.0 => sum += qv * (qv / pv).ln(),
            _ => return Err(Error::InfiniteDivergence(k.clone())),
        }
    }
    if sum < 0.0 && sum > -1e-9 {
        sum = 0.0;
    }
    Ok(sum)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Kl,
    LlrG,
    MeanGap,
    WeatEffect,
}

/// A divergence statistic with its per-cell decomposition.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceResult {
    pub statistic: f64,
    pub per_cell: BTreeMap<String, f64>,
    pub kind: DivergenceKind,
}

/// Log-likelihood-ratio goodness-of-fit statistic
/// G = 2 * sum_y O_y * ln(O_y / (n * p_y)), which equals 2n * KL(empirical || ideal).
/// `per_cell` holds the per-outcome contributions.
pub fn llr_statistic(observed_counts: &BTreeMap<String, f64>, ideal: &ProbTable) -> Result<DivergenceResult> {
    if observed_counts.is_empty() {
        return Err(Error::EmptyDistribution("no observed counts".into()));
    }
    let mut n = 0.0;
    for (k, c) in observed_counts {
        if !(c.is_finite() && *c >= 0.0) {
            return Err(Error::Validation(format!("count for '{k}' is invalid: {c}")));
        }
        n += c;
    }
    if n == 0.0 {
        return Err(Error::EmptyDistribution("all observed counts are zero".into()));
    }
    check_table(ideal, "ideal")?;
    let mut per_cell = BTreeMap::new();
    let mut g = 0.0;
    for (k, o) in observed_counts {
        let term = if *o == 0.0 {
            0.0
        } else {
            match ideal.get(k) {
                Some(p) if *p > 0.0 => 2.0 * o * (o / (n * p)).ln(),
                _ => return Err(Error::InfiniteDivergence(k.clone())),
            }
        };
        per_cell.insert(k.clone(), term);
        g += term;
    }
    if g < 0.0 && g > -1e-9 {
        g = 0.0;
    }
    Ok(DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG })
}

/// Specification of the ideal conditional distribution P(Y | A).
#[derive(Clone, Debug)]
pub enum IdealDistribution {
    /// Per-cell tables; the key `*` is a default for unlisted cells.
    Explicit(BTreeMap<String, ProbTable>),
    /// 1/K over the outcome support, every cell.
    Uniform,
    /// Estimated from a reference dataset.
    Empirical(ConditionalDistribution),
    /// (1 - lambda) * base + lambda * uniform per cell.
    TowardUniform { base: ConditionalDistribution, lambda: f64 },
}

impl IdealDistribution {
    /// Estimate an empirical ideal from a reference dataset.
    pub fn empirical_from(
        reference: &Dataset,
        attribute: &AttributeSpec,
        field: OutcomeField,
        smoothing_alpha: f64,
    ) -> Result<Self> {
        Ok(IdealDistribution::Empirical(estimate_conditional(
            reference,
            attribute,
            field,
            SplitFilter::Both,
            smoothing_alpha,
        )?))
    }

    /// Concrete per-cell tables for the given cells and outcome support.
    /// Every returned probability is strictly positive on the support.
    pub fn resolve(&self, cells: &[String], support: &[String]) -> Result<BTreeMap<String, ProbTable>> {
        if support.is_empty() {
            return Err(Error::EmptyDistribution("empty outcome support".into()));
        }
        let uniform: f64 = 1.0 / support.len() as f64;
        let mut resolved = BTreeMap::new();
        for cell in cells {
            let table: ProbTable = match self {
                IdealDistribution::Uniform => {
                    support.iter().map(|s| (s.clone(), uniform)).collect()
                }
                IdealDistribution::Explicit(tables) => {
                    let t = tables.get(cell).or_else(|| tables.get("*")).ok_or_else(|| {
                        Error::Validation(format!("ideal table has no entry for cell '{cell}'"))
                    })?;
                    check_table(t, "ideal")?;
                    t.clone()
                }
                IdealDistribution::Empirical(cond) => {
                    let c = cond.cells.get(cell).ok_or_else(|| {
                        Error::EmptyDistribution(format!("reference has no records for cell '{cell}'"))
                    })?;
                    c.probs.clone()
                }
                IdealDistribution::TowardUniform { base, lambda } => {
                    if !(*lambda >= 0.0 && *lambda <= 1.0) {
                        return Err(Error::Validation(format!(
                            "toward_uniform lambda must lie in [0,1], got {lambda}"
                        )));
                    }
                    let c = base.cells.get(cell).ok_or_else(|| {
                        Error::EmptyDistribution(format!("base distribution has no cell '{cell}'"))
                    })?;
                    c.probs
                        .iter()
                        .map(|(k, p)| (k.clone(), (1.0 - lambda) * p + lambda * uniform))
                        .collect()
                }
            };
            let missing: Vec<&str> = support
                .iter()
                .map(String::as_str)
                .filter(|s| !table.contains_key(*s))
                .collect();
            if !missing.is_empty() {
                return Err(Error::SupportMismatch(format!(
                    "ideal for cell '{cell}' is missing outcome(s): {}",
                    missing.join(", ")
                )));
            }
            for s in support {
                if table[s] <= 0.0 {
                    return Err(Error::InfiniteDivergence(s.clone()));
                }
            }
            resolved.insert(cell.clone(), table);
        }
        Ok(resolved)
    }
}

/// Per-record prediction error: 0/1 loss for categorical outcomes, absolute
/// difference for continuous outcomes. Order follows `dataset.records`.
pub fn error_values(dataset: &Dataset) -> Vec<f64> {
    dataset.records.iter().map(error_of).collect()
}

pub fn error_of(rec: &PredictionRecord) -> f64 {
    match (&rec.y_true, &rec.y_pred) {
        (crate::model::OutcomeValue::Value(t), crate::model::OutcomeValue::Value(p)) => {
            (t - p).abs()
        }
        (t, p) => {
            if t == p {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Label-shuffle permutation test. The statistic is evaluated on the observed
/// cell assignment and on `n_permutations` random reassignments; the p-value
/// is the add-one upper tail. Records are ordered by id before any generator
/// use, so the result does not depend on input order.
pub fn permutation_test<F>(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    statistic: F,
    n_permutations: u32,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&CellAssignment, &[u32]) -> f64 + Sync,
{
    if n_permutations == 0 {
        return Err(Error::Validation("n_permutations must be positive".into()));
    }
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let asg = assign_cells(dataset.records.iter(), &resolver);
    let mut distinct: Vec<u32> = asg.cells.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(format!(
            "attribute '{}' has a single populated cell; nothing to permute",
            attribute.name
        )));
    }
    let observed = statistic(&asg, &asg.cells);
    let stream = derive_seed(seed, "stats.permutation_test");
    Ok(shuffle_pvalue(&asg.cells, observed, &|perm| statistic(&asg, perm), n_permutations, stream))
}

pub(crate) fn shuffle_pvalue(
    cells: &[u32],
    observed: f64,
    stat: &(dyn Fn(&[u32]) -> f64 + Sync),
    n_permutations: u32,
    stream_seed: u64,
) -> f64 {
    let exceed: u32 = (0..n_permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(replicate_seed(stream_seed, u64::from(i)));
            let mut perm = cells.to_vec();
            perm.shuffle(&mut rng);
            u32::from(stat(&perm) >= observed)
        })
        .sum();
    f64::from(1 + exceed) / f64::from(1 + n_permutations)
}

/// Weighted cell-by-outcome count matrix used by the resampling engines.
#[derive(Clone, Debug)]
pub(crate) struct CountMatrix {
    pub n_cells: usize,
    pub n_outcomes: usize,
    pub counts: Vec<f64>,
    pub cell_totals: Vec<f64>,
}

impl CountMatrix {
    pub fn zeros(n_cells: usize, n_outcomes: usize) -> Self {
        CountMatrix {
            n_cells,
            n_outcomes,
            counts: vec![0.0; n_cells * n_outcomes],
            cell_totals: vec![0.0; n_cells],
        }
    }

    pub fn add(&mut self, cell: usize, outcome: usize, weight: f64) {
        self.counts[cell * self.n_outcomes + outcome] += weight;
        self.cell_totals[cell] += weight;
    }

    pub fn from_assignment(
        cells: &[u32],
        outcomes: &[u32],
        weights: &[f64],
        n_cells: usize,
        n_outcomes: usize,
    ) -> Self {
        let mut m = CountMatrix::zeros(n_cells, n_outcomes);
        for i in 0..cells.len() {
            m.add(cells[i] as usize, outcomes[i] as usize, weights[i]);
        }
        m
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.counts[cell * self.n_outcomes..(cell + 1) * self.n_outcomes]
    }
}

/// Aggregate goodness-of-fit statistic of smoothed per-cell distributions
/// against per-cell ideal rows: sum over cells of 2 * n_a * KL(q_a || p_a).
/// Returns (aggregate, per-cell values). Ideal rows must be positive wherever
/// the smoothed estimate is.
pub(crate) fn g_vs_ideal_rows(
    counts: &CountMatrix,
    ideal_rows: &[Vec<f64>],
    alpha: f64,
) -> (f64, Vec<f64>) {
    let mut per_cell = vec![0.0; counts.n_cells];
    let mut total = 0.0;
    for a in 0..counts.n_cells {
        let n_a = counts.cell_totals[a];
        if n_a == 0.0 {
            continue;
        }
        let probs = smooth_probs(counts.row(a), alpha);
        let mut kl = 0.0;
        for (y, q) in probs.iter().enumerate() {
            if *q > 0.0 {
                let p = ideal_rows[a][y];
                kl += if p > 0.0 { q * (q / p).ln() } else { f64::INFINITY };
            }
        }
        let mut g = 2.0 * n_a * kl;
        if g < 0.0 && g > -1e-9 {
            g = 0.0;
        }
        per_cell[a] = g;
        total += g;
    }
    if total < 0.0 && total > -1e-9 {
        total = 0.0;
    }
    (total, per_cell)
}

/// Same aggregate form, but the ideal side is the smoothed distribution of a
/// second count matrix over the same cells (used for predicted-vs-training
/// comparisons). Identical matrices give exactly zero.
pub(crate) fn g_between(pred: &CountMatrix, truth: &CountMatrix, alpha: f64) -> (f64, Vec<f64>) {
    let mut per_cell = vec![0.0; pred.n_cells];
    let mut total = 0.0;
    for a in 0..pred.n_cells {
        let n_a = pred.cell_totals[a];
        if n_a == 0.0 {
            continue;
        }
        let q_row = smooth_probs(pred.row(a), alpha);
        let p_row = smooth_probs(truth.row(a), alpha);
        let mut kl = 0.0;
        for y in 0..pred.n_outcomes {
            let q = q_row[y];
            if q > 0.0 {
                let p = p_row[y];
                kl += if p > 0.0 { q * (q / p).ln() } else { f64::INFINITY };
            }
        }
        let mut g = 2.0 * n_a * kl;
        if g < 0.0 && g > -1e-9 {
            g = 0.0;
        }
        per_cell[a] = g;
        total += g;
    }
    if total < 0.0 && total > -1e-9 {
        total = 0.0;
    }
    (total, per_cell)
}

/// Monte-Carlo p-value for a goodness-of-fit statistic: outcomes are redrawn
/// per record from the ideal row of its cell, keeping cells and weights fixed.
pub(crate) fn ideal_draw_pvalue(
    cells: &[u32],
    weights: &[f64],
    ideal_rows: &[Vec<f64>],
    n_cells: usize,
    n_outcomes: usize,
    observed: f64,
    stat: &(dyn Fn(&CountMatrix) -> f64 + Sync),
    n_sims: u32,
    stream_seed: u64,
) -> f64 {
    let cumulative: Vec<Vec<f64>> = ideal_rows
        .iter()
        .map(|row| {
            let mut acc = 0.0;
            row.iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let exceed: u32 = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(replicate_seed(stream_seed, u64::from(i)));
            let mut m = CountMatrix::zeros(n_cells, n_outcomes);
            for r in 0..cells.len() {
                let cum = &cumulative[cells[r] as usize];
                let u: f64 = rng.gen();
                let outcome = cum.partition_point(|c| *c < u).min(n_outcomes - 1);
                m.add(cells[r] as usize, outcome, weights[r]);
            }
            u32::from(stat(&m) >= observed)
        })
        .sum();
    f64::from(1 + exceed) / f64::from(1 + n_sims)
}

/// Paired-swap p-value: under the null that gold and predicted outcomes are
/// exchangeable within a record, each replicate swaps the pair independently
/// with probability one half and recomputes the statistic over the resulting
/// (predicted, gold) count matrices.
pub(crate) fn swap_pvalue(
    cells: &[u32],
    true_of: &[u32],
    pred_of: &[u32],
    weights: &[f64],
    n_cells: usize,
    n_outcomes: usize,
    observed: f64,
    stat: &(dyn Fn(&CountMatrix, &CountMatrix) -> f64 + Sync),
    n_sims: u32,
    stream_seed: u64,
) -> f64 {
    let exceed: u32 = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(replicate_seed(stream_seed, u64::from(i)));
            let mut pred = CountMatrix::zeros(n_cells, n_outcomes);
            let mut truth = CountMatrix::zeros(n_cells, n_outcomes);
            for r in 0..cells.len() {
                let cell = cells[r] as usize;
                let (t, p) = if rng.gen::<bool>() {
                    (pred_of[r], true_of[r])
                } else {
                    (true_of[r], pred_of[r])
                };
                truth.add(cell, t as usize, weights[r]);
                pred.add(cell, p as usize, weights[r]);
            }
            u32::from(stat(&pred, &truth) >= observed)
        })
        .sum();
    f64::from(1 + exceed) / f64::from(1 + n_sims)
}
