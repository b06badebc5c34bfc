//! Data-level countermeasures: post-stratification weights, stratified
//! resampling, matched controls, counterfactual text augmentation, and
//! post-hoc threshold matching. Every operation returns new data and leaves
//! its inputs untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AttributeKind, AttributeSpec, AttributeValue, Dataset, PredictionRecord};
use crate::rng::{derive_seed, replicate_seed, rng_for};
use crate::stats::{AttributeResolver, ProbTable};

/// Per-cell weight multipliers that re-balance an attribute marginal.
#[derive(Clone, Debug, Serialize)]
pub struct WeightAssignment {
    pub weights: BTreeMap<String, f64>,
}

fn check_marginal(t: &ProbTable, name: &str) -> Result<()> {
    if t.is_empty() {
        return Err(Error::EmptyDistribution(format!("{name} marginal is empty")));
    }
    let mut sum = 0.0;
    for (k, p) in t {
        if !(p.is_finite() && *p >= 0.0) {
            return Err(Error::Validation(format!(
                "{name} marginal has invalid probability {p} for cell '{k}'"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("{name} marginal sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Classic post-stratification: weight(a) = target(a) / source(a). The
/// weighted source marginal then equals the target marginal.
pub fn poststratify_weights(
    source_marginal: &ProbTable,
    target_marginal: &ProbTable,
) -> Result<WeightAssignment> {
    check_marginal(source_marginal, "source")?;
    check_marginal(target_marginal, "target")?;
    let unreachable: Vec<&str> = target_marginal
        .iter()
        .filter(|(k, p)| **p > 0.0 && source_marginal.get(*k).copied().unwrap_or(0.0) <= 0.0)
        .map(|(k, _)| k.as_str())
        .collect();
    if !unreachable.is_empty() {
        return Err(Error::SupportMismatch(format!(
            "target places mass on cell(s) with zero source mass, unrecoverable by reweighting: {}",
            unreachable.join(", ")
        )));
    }
    let weights = source_marginal
        .iter()
        .map(|(k, s)| {
            let t = target_marginal.get(k).copied().unwrap_or(0.0);
            (k.clone(), if *s > 0.0 { t / s } else { 0.0 })
        })
        .collect();
    Ok(WeightAssignment { weights })
}

/// Multiply each record's weight by its attribute cell's multiplier.
/// Records missing the attribute keep their weight.
pub fn apply_weights(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    assignment: &WeightAssignment,
) -> Result<Dataset> {
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let labels = resolver.labels();
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    for rec in &dataset.records {
        if let Some(i) = resolver.cell_index(rec) {
            covered.insert(i);
        }
    }
    let missing: Vec<&str> = covered
        .iter()
        .map(|i| labels[*i].as_str())
        .filter(|l| !assignment.weights.contains_key(*l))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "weight assignment covers no cell(s): {}",
            missing.join(", ")
        )));
    }
    let records = dataset
        .records
        .iter()
        .map(|rec| {
            let mut out = rec.clone();
            if let Some(i) = resolver.cell_index(rec) {
                out.weight = rec.weight * assignment.weights[&labels[i]];
            }
            out
        })
        .collect();
    Dataset::new(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Down,
    UpWithReplacement,
}

/// Largest-remainder allocation of `n` slots over `probs` (which sum to 1).
pub(crate) fn exact_counts(probs: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = probs.iter().map(|p| (p * n as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|a, b| {
        let fa = probs[*a] * n as f64 - (probs[*a] * n as f64).floor();
        let fb = probs[*b] * n as f64 - (probs[*b] * n as f64).floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(b))
    });
    for i in 0..n.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Re-sample records so the attribute marginal matches `target_marginal`.
/// Down-sampling draws without replacement and derives the largest feasible
/// total; up-sampling draws with replacement at the original total (copies
/// get derived ids to keep ids unique). Relative record order is preserved.
pub fn stratified_resample(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    target_marginal: &ProbTable,
    mode: ResampleMode,
    seed: u64,
) -> Result<Dataset> {
    check_marginal(target_marginal, "target")?;
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let labels = resolver.labels().to_vec();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (idx, rec) in dataset.records.iter().enumerate() {
        if let Some(i) = resolver.cell_index(rec) {
            members[i].push(idx);
        }
    }
    for (k, p) in target_marginal {
        if *p > 0.0 {
            let available = labels
                .iter()
                .position(|l| l == k)
                .map(|i| members[i].len())
                .unwrap_or(0);
            if available == 0 {
                return Err(Error::Infeasible(format!(
                    "target requires cell '{k}' but the dataset has no records there"
                )));
            }
        }
    }

    let probs: Vec<f64> =
        labels.iter().map(|l| target_marginal.get(l).copied().unwrap_or(0.0)).collect();
    let mut n = match mode {
        ResampleMode::Down => {
            let mut bound = usize::MAX;
            for (i, p) in probs.iter().enumerate() {
                if *p > 0.0 {
                    bound = bound.min((members[i].len() as f64 / p).floor() as usize);
                }
            }
            bound
        }
        ResampleMode::UpWithReplacement => dataset.records.len(),
    };
    if n == 0 || n == usize::MAX {
        return Err(Error::Infeasible("no feasible sample size for the target marginal".into()));
    }
    let mut counts = exact_counts(&probs, n);
    if mode == ResampleMode::Down {
        // Largest-remainder rounding can overshoot the binding cell by one.
        while counts.iter().enumerate().any(|(i, c)| *c > members[i].len()) {
            n -= 1;
            counts = exact_counts(&probs, n);
        }
    }

    let stream = derive_seed(seed, "mitigate.resample");
    let mut chosen: Vec<(usize, usize)> = Vec::new(); // (record index, copy number)
    for (i, want) in counts.iter().enumerate() {
        if *want == 0 {
            continue;
        }
        let mut rng = rng_for(replicate_seed(stream, i as u64));
        match mode {
            ResampleMode::Down => {
                let picks = rand::seq::index::sample(&mut rng, members[i].len(), *want);
                for p in picks {
                    chosen.push((members[i][p], 0));
                }
            }
            ResampleMode::UpWithReplacement => {
                let mut copies: BTreeMap<usize, usize> = BTreeMap::new();
                for _ in 0..*want {
                    let p = rng.gen_range(0..members[i].len());
                    *copies.entry(members[i][p]).or_insert(0) += 1;
                }
                for (idx, c) in copies {
                    for copy in 0..c {
                        chosen.push((idx, copy));
                    }
                }
            }
        }
    }
    chosen.sort();
    let records: Vec<PredictionRecord> = chosen
        .iter()
        .map(|(idx, copy)| {
            let mut rec = dataset.records[*idx].clone();
            if *copy > 0 {
                rec.id = format!("{}~{}", rec.id, copy + 1);
            }
            rec
        })
        .collect();
    Dataset::new(records)
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    pub selected: Vec<PredictionRecord>,
    /// Cases left unmatched because the control pool ran out.
    pub shortfall: usize,
    pub warnings: Vec<String>,
}

/// Greedy 1-nearest-neighbor matching without replacement over the
/// standardized attribute space. Cases are visited in ascending id order;
/// distance ties pick the control with the smallest id, so the result is
/// deterministic (the seed parameter is reserved for sampling variants).
pub fn matched_controls(
    cases: &[PredictionRecord],
    controls: &[PredictionRecord],
    attributes: &[AttributeSpec],
    _seed: u64,
) -> Result<MatchResult> {
    if attributes.is_empty() {
        return Err(Error::Validation("no matching attributes configured".into()));
    }
    if controls.is_empty() {
        return Err(Error::EmptyDistribution("control pool is empty".into()));
    }
    for rec in cases.iter().chain(controls) {
        for spec in attributes {
            if !rec.attrs.contains_key(&spec.name) {
                return Err(Error::Validation(format!(
                    "record '{}' is missing matching attribute '{}'",
                    rec.id, spec.name
                )));
            }
        }
    }

    // Pooled standardization for continuous attributes.
    let mut scale: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for spec in attributes {
        if spec.kind != AttributeKind::Continuous {
            continue;
        }
        let values: Vec<f64> = cases
            .iter()
            .chain(controls)
            .filter_map(|r| match r.attrs.get(&spec.name) {
                Some(AttributeValue::Continuous(v)) => Some(*v),
                _ => None,
            })
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        scale.insert(spec.name.as_str(), (mean, var.sqrt()));
    }
    let distance = |a: &PredictionRecord, b: &PredictionRecord| -> f64 {
        let mut d = 0.0;
        for spec in attributes {
            match (a.attrs.get(&spec.name), b.attrs.get(&spec.name)) {
                (Some(AttributeValue::Continuous(x)), Some(AttributeValue::Continuous(y))) => {
                    let (_, sd) = scale[spec.name.as_str()];
                    d += if sd > 0.0 { (x - y).abs() / sd } else { 0.0 };
                }
                (va, vb) => d += f64::from(va != vb),
            }
        }
        d
    };

    let mut case_order: Vec<&PredictionRecord> = cases.iter().collect();
    case_order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut pool: Vec<&PredictionRecord> = controls.iter().collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let mut taken = vec![false; pool.len()];
    let mut selected = Vec::new();
    let mut shortfall = 0usize;
    for case in case_order {
        let mut best: Option<(f64, usize)> = None;
        for (i, ctrl) in pool.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = distance(case, ctrl);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        match best {
            Some((_, i)) => {
                taken[i] = true;
                selected.push(pool[i].clone());
            }
            None => shortfall += 1,
        }
    }
    let mut warnings = Vec::new();
    if shortfall > 0 {
        warnings.push(format!(
            "control pool exhausted: {shortfall} case(s) left unmatched"
        ));
    }
    Ok(MatchResult { selected, shortfall, warnings })
}

/// Unordered word pairs for counterfactual swaps. Matching is whole-token
/// and case-preserving.
#[derive(Clone, Debug)]
pub struct SwapLexicon {
    pairs: Vec<(String, String)>,
    map: BTreeMap<String, String>,
}

impl SwapLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (a, b) in &pairs {
            let (la, lb) = (a.to_lowercase(), b.to_lowercase());
            if la.is_empty() || lb.is_empty() || la == lb {
                return Err(Error::Validation(format!("invalid swap pair ('{a}', '{b}')")));
            }
            for (x, y) in [(&la, &lb), (&lb, &la)] {
                if map.insert(x.clone(), y.clone()).is_some() {
                    return Err(Error::Validation(format!(
                        "word '{x}' appears in more than one swap pair"
                    )));
                }
            }
        }
        Ok(SwapLexicon { pairs, map })
    }

    /// One pair per line, two whitespace-separated words; blank lines and
    /// lines starting with '#' are skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => pairs.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "expected exactly two words per line".into(),
                    })
                }
            }
        }
        SwapLexicon::new(pairs)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    fn partner(&self, lower: &str) -> Option<&str> {
        self.map.get(lower).map(String::as_str)
    }
}

/// Transfer the template token's casing onto the replacement.
fn match_case(template: &str, replacement: &str) -> String {
    let mut chars = template.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let rest_upper = template.chars().skip(1).all(char::is_uppercase);
    let has_rest = template.chars().count() > 1;
    if first_upper && has_rest && rest_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut out = String::new();
        let mut rep = replacement.chars();
        if let Some(c) = rep.next() {
            out.extend(c.to_uppercase());
        }
        out.extend(rep);
        out
    } else {
        replacement.to_string()
    }
}

/// Swap every lexicon word in the text (whole tokens only). Returns None
/// when nothing matched.
fn swap_text(text: &str, lexicon: &SwapLexicon) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut token = String::new();
    let mut hit = false;
    let flush = |token: &mut String, out: &mut String, hit: &mut bool| {
        if token.is_empty() {
            return;
        }
        match lexicon.partner(&token.to_lowercase()) {
            Some(p) => {
                out.push_str(&match_case(token, p));
                *hit = true;
            }
            None => out.push_str(token),
        }
        token.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' {
            token.push(c);
        } else {
            flush(&mut token, &mut out, &mut hit);
            out.push(c);
        }
    }
    flush(&mut token, &mut out, &mut hit);
    hit.then_some(out)
}

/// Flip rule applied to augmented copies: a categorical attribute whose
/// values swap in tandem with the text.
#[derive(Clone, Debug)]
pub struct AttributeFlip {
    pub attribute: String,
    pub pairs: Vec<(String, String)>,
}

impl AttributeFlip {
    fn flip(&self, value: &AttributeValue) -> Option<AttributeValue> {
        let AttributeValue::Categorical(v) = value else { return None };
        for (a, b) in &self.pairs {
            if v == a {
                return Some(AttributeValue::Categorical(b.clone()));
            }
            if v == b {
                return Some(AttributeValue::Categorical(a.clone()));
            }
        }
        None
    }
}

/// For every record whose text contains a lexicon word, append a copy with
/// all lexicon words swapped (and the flip attribute toggled, when given).
/// Copies get the id suffix `~cf`; originals are untouched.
pub fn counterfactual_augment(
    dataset: &Dataset,
    lexicon: &SwapLexicon,
    attribute_flip: Option<&AttributeFlip>,
) -> Result<Dataset> {
    let mut records = dataset.records.clone();
    let mut copies = Vec::new();
    for rec in &dataset.records {
        let Some(text) = rec.text.as_deref() else { continue };
        let Some(swapped) = swap_text(text, lexicon) else { continue };
        let mut copy = rec.clone();
        copy.id = format!("{}~cf", rec.id);
        copy.text = Some(swapped);
        if let Some(flip) = attribute_flip {
            if let Some(value) = copy.attrs.get(&flip.attribute) {
                if let Some(flipped) = flip.flip(value) {
                    copy.attrs.insert(flip.attribute.clone(), flipped);
                }
            }
        }
        copies.push(copy);
    }
    records.extend(copies);
    Dataset::new(records)
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdResult {
    pub thresholds: BTreeMap<String, f64>,
    pub achieved_rates: BTreeMap<String, f64>,
}

/// Per-cell score thresholds that hit the ideal positive rates: the smallest
/// admissible count at least the requested rate (ties admit the fewest).
pub fn threshold_match(
    scores: &BTreeMap<String, Vec<f64>>,
    ideal_positive_rates: &BTreeMap<String, f64>,
) -> Result<ThresholdResult> {
    let mut thresholds = BTreeMap::new();
    let mut achieved_rates = BTreeMap::new();
    for (cell, rate) in ideal_positive_rates {
        if !(rate.is_finite() && (0.0..=1.0).contains(rate)) {
            return Err(Error::Validation(format!(
                "ideal positive rate for cell '{cell}' must lie in [0,1], got {rate}"
            )));
        }
        let values = scores
            .get(cell)
            .ok_or_else(|| Error::EmptyDistribution(format!("cell '{cell}' has no scores")))?;
        if values.is_empty() {
            return Err(Error::EmptyDistribution(format!("cell '{cell}' has no scores")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("cell '{cell}' has non-finite scores")));
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let n = sorted.len();
        let want = rate * n as f64;
        // Candidate counts are at distinct-value boundaries; take the
        // smallest count reaching the requested rate.
        let mut admit = n;
        for i in 0..n {
            let boundary = i + 1 == n || sorted[i + 1] < sorted[i];
            if boundary && (i + 1) as f64 >= want - 1e-9 {
                admit = i + 1;
                break;
            }
        }
        if want <= 1e-9 {
            admit = 0;
        }
        let threshold = if admit == 0 { f64::INFINITY } else { sorted[admit - 1] };
        thresholds.insert(cell.clone(), threshold);
        achieved_rates.insert(cell.clone(), admit as f64 / n as f64);
    }
    Ok(ThresholdResult { thresholds, achieved_rates })
}

/// Warn when a mitigation moved the gold-label marginal by more than 0.05:
/// balancing one attribute can silently unbalance the label distribution.
pub fn label_shift_warning(before: &Dataset, after: &Dataset) -> Option<String> {
    let marginal = |ds: &Dataset| -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        let mut total = 0.0;
        for rec in &ds.records {
            if let Some(l) = rec.y_true.as_label() {
                *counts.entry(l.to_string()).or_default() += rec.weight;
                total += rec.weight;
            }
        }
        if total > 0.0 {
            for v in counts.values_mut() {
                *v /= total;
            }
        }
        counts
    };
    let b = marginal(before);
    let a = marginal(after);
    let mut worst: Option<(String, f64)> = None;
    for key in b.keys().chain(a.keys()) {
        let gap = (b.get(key).copied().unwrap_or(0.0) - a.get(key).copied().unwrap_or(0.0)).abs();
        if worst.as_ref().is_none_or(|(_, w)| gap > *w) {
            worst = Some((key.clone(), gap));
        }
    }
    worst.and_then(|(label, gap)| {
        (gap > 0.05).then(|| {
            format!(
                "mitigation shifted the gold-label marginal by {gap:.3} on '{label}'; check for new confounds before retraining"
            )
        })
    })
}
