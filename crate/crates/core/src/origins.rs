//! Origin diagnosis: given disparities, which bias mechanism is the evidence
//! consistent with? Selection bias (who got sampled), label bias (what the
//! annotations say), overamplification (what the model exaggerates), and
//! semantic bias (what the embeddings encode; produced by the semantic
//! module and carried here).
//!
//! A flag means the data pattern is consistent with an origin. It is not a
//! causal proof, and origins can co-occur.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeSpec, AuditConfig, Dataset, OutcomeKind, PredictionRecord, Split};
use crate::rng::derive_seed;
use crate::stats::{
    assign_cells, g_between, g_vs_ideal_rows, ideal_draw_pvalue, kl_divergence, shuffle_pvalue,
    smooth_probs, swap_pvalue, AttributeResolver, CountMatrix, DivergenceKind, DivergenceResult,
    IdealDistribution, ProbTable,
};

pub const DIAGNOSIS_CAVEAT: &str = "flags indicate consistency with a bias origin, not proof; \
origins can co-occur and confound one another";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasOrigin {
    LabelBias,
    SelectionBias,
    Overamplification,
    SemanticBias,
}

#[derive(Clone, Debug, Serialize)]
pub struct OriginFinding {
    pub origin: BiasOrigin,
    pub divergence: DivergenceResult,
    pub p_value: f64,
    pub effect_size_nats: f64,
    pub flagged: bool,
    pub evidence: String,
    pub caveat: String,
}

/// What the target population looks like, for the selection check: either a
/// sampled reference dataset or an explicit attribute-cell marginal.
#[derive(Clone, Debug)]
pub enum TargetReference<'a> {
    Dataset(&'a Dataset),
    Marginal(ProbTable),
}

fn flag(p_value: f64, effect: f64, config: &AuditConfig) -> bool {
    p_value < config.alpha && effect >= config.effect_floor
}

fn fmt_marginal(labels: &[String], probs: &[f64]) -> String {
    labels
        .iter()
        .zip(probs)
        .map(|(l, p)| format!("{l}: {p:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Records used as the sampled source population: the source split, or every
/// record when nothing is tagged source.
fn source_records(dataset: &Dataset) -> (Vec<&PredictionRecord>, bool) {
    let tagged: Vec<&PredictionRecord> =
        dataset.records.iter().filter(|r| r.split == Split::Source).collect();
    if tagged.is_empty() {
        (dataset.records.iter().collect(), true)
    } else {
        (tagged, false)
    }
}

/// Aggregate two-sample homogeneity statistic over smoothed marginals:
/// 2·n_s·KL(q_s || pool) + 2·n_t·KL(q_t || pool) with pool the weight-average
/// of the two smoothed marginals. Exactly zero when the counts agree.
fn two_sample_g(counts_s: &[f64], counts_t: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let n_s: f64 = counts_s.iter().sum();
    let n_t: f64 = counts_t.iter().sum();
    let q_s = smooth_probs(counts_s, alpha);
    let q_t = smooth_probs(counts_t, alpha);
    let total = n_s + n_t;
    let mut per_cell = vec![0.0; counts_s.len()];
    let mut g = 0.0;
    for a in 0..counts_s.len() {
        let pool = (n_s * q_s[a] + n_t * q_t[a]) / total;
        let mut term = 0.0;
        if q_s[a] > 0.0 {
            term += 2.0 * n_s * q_s[a] * (q_s[a] / pool).ln();
        }
        if q_t[a] > 0.0 {
            term += 2.0 * n_t * q_t[a] * (q_t[a] / pool).ln();
        }
        per_cell[a] = term;
        g += term;
    }
    if g < 0.0 && g > -1e-9 {
        g = 0.0;
    }
    (g, per_cell)
}

/// Selection bias: does the source attribute marginal diverge from the
/// target population's marginal? Q(A_source) vs P(A_target).
pub fn selection_bias_check(
    source: &Dataset,
    target: &TargetReference<'_>,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    match target {
        TargetReference::Marginal(marginal) => {
            selection_vs_marginal(source, marginal, attribute, config)
        }
        TargetReference::Dataset(target_ds) => {
            selection_vs_dataset(source, target_ds, attribute, config)
        }
    }
}

fn selection_vs_marginal(
    source: &Dataset,
    marginal: &ProbTable,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    let mut mass = 0.0;
    for (k, p) in marginal {
        if !(p.is_finite() && *p >= 0.0) {
            return Err(Error::Validation(format!(
                "target marginal has invalid probability {p} for cell '{k}'"
            )));
        }
        mass += p;
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("target marginal sums to {mass}, expected 1")));
    }

    let resolver = AttributeResolver::build(attribute, &[source])?;
    let (records, untagged) = source_records(source);
    let asg = assign_cells(records.iter().copied(), &resolver);
    if asg.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no source records carry attribute '{}'",
            attribute.name
        )));
    }

    // Cell space: populated source cells plus cells the target gives mass to.
    let mut labels: Vec<String> = Vec::new();
    let mut raw = vec![0.0f64; asg.labels.len()];
    for (i, rec) in asg.cells.iter().zip(&asg.records) {
        raw[*i as usize] += rec.weight;
    }
    for (i, l) in asg.labels.iter().enumerate() {
        if raw[i] > 0.0 {
            labels.push(l.clone());
        }
    }
    for (k, p) in marginal {
        if *p > 0.0 && !labels.contains(k) {
            labels.push(k.clone());
        }
    }
    labels.sort();
    let index: BTreeMap<&str, u32> =
        labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();

    let missing: Vec<String> = asg
        .labels
        .iter()
        .enumerate()
        .filter(|(i, _)| raw[*i] > 0.0)
        .filter(|(_, l)| marginal.get(*l).copied().unwrap_or(0.0) <= 0.0)
        .map(|(_, l)| l.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::SupportMismatch(format!(
            "target marginal gives zero mass to populated source cell(s): {}",
            missing.join(", ")
        )));
    }

    let cells: Vec<u32> = vec![0; asg.records.len()];
    let outcomes: Vec<u32> = asg
        .cells
        .iter()
        .map(|i| index[asg.labels[*i as usize].as_str()])
        .collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let counts = CountMatrix::from_assignment(&cells, &outcomes, &weights, 1, labels.len());
    let n: f64 = counts.cell_totals[0];

    let p_vec: Vec<f64> = labels.iter().map(|l| marginal[l]).collect();
    let rows = vec![p_vec.clone()];
    let alpha_s = config.smoothing_alpha;
    let (g, _) = g_vs_ideal_rows(&counts, &rows, alpha_s);
    let q = smooth_probs(counts.row(0), alpha_s);
    let per_cell: BTreeMap<String, f64> = labels
        .iter()
        .zip(&q)
        .zip(&p_vec)
        .map(|((l, qa), pa)| (l.clone(), 2.0 * n * qa * (qa / pa).ln()))
        .collect();

    let stream = derive_seed(config.seed, "origins.selection");
    let p_value = ideal_draw_pvalue(
        &cells,
        &weights,
        &rows,
        1,
        labels.len(),
        g,
        &|m| g_vs_ideal_rows(m, &rows, alpha_s).0,
        config.n_permutations,
        stream,
    );
    let effect_size_nats = g / n;

    let raw_table: ProbTable = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c = index[l.as_str()];
            let _ = c;
            (l.clone(), counts.row(0)[i] / n)
        })
        .collect();
    let kl_text = match kl_divergence(&raw_table, marginal) {
        Ok(v) => format!("KL {v:.4} nats"),
        Err(_) => {
            let smoothed: ProbTable = labels.iter().cloned().zip(q.iter().copied()).collect();
            let v = kl_divergence(&smoothed, marginal).unwrap_or(f64::INFINITY);
            format!("KL {v:.4} nats (smoothed)")
        }
    };
    let mut evidence = format!(
        "source marginal ({}) vs target marginal ({}); {kl_text}; n {n}",
        fmt_marginal(&labels, &counts.row(0).iter().map(|c| c / n).collect::<Vec<_>>()),
        fmt_marginal(&labels, &p_vec),
    );
    if untagged {
        evidence.push_str("; note: no source-split tags, all records treated as source");
    }

    Ok(OriginFinding {
        origin: BiasOrigin::SelectionBias,
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        evidence,
        caveat: DIAGNOSIS_CAVEAT.to_string(),
    })
}

fn selection_vs_dataset(
    source: &Dataset,
    target: &Dataset,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    let resolver = AttributeResolver::build(attribute, &[source, target])?;
    let (records, untagged) = source_records(source);
    let asg_s = assign_cells(records.iter().copied(), &resolver);
    let asg_t = assign_cells(target.records.iter(), &resolver);
    if asg_s.records.is_empty() || asg_t.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "attribute '{}' missing from the source or the target reference",
            attribute.name
        )));
    }
    let m = resolver.labels().len();
    let mut counts_s = vec![0.0f64; m];
    let mut counts_t = vec![0.0f64; m];
    for (i, rec) in asg_s.cells.iter().zip(&asg_s.records) {
        counts_s[*i as usize] += rec.weight;
    }
    for (i, rec) in asg_t.cells.iter().zip(&asg_t.records) {
        counts_t[*i as usize] += rec.weight;
    }
    let overlap = (0..m).any(|a| counts_s[a] > 0.0 && counts_t[a] > 0.0);
    if !overlap {
        let pop = |c: &[f64]| {
            (0..m)
                .filter(|a| c[*a] > 0.0)
                .map(|a| resolver.labels()[a].clone())
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(Error::SupportMismatch(format!(
            "source cells ({}) and target cells ({}) do not overlap",
            pop(&counts_s),
            pop(&counts_t)
        )));
    }

    let alpha_s = config.smoothing_alpha;
    let (g, per_cell_vals) = two_sample_g(&counts_s, &counts_t, alpha_s);

    // Two-sample permutation: shuffle which records belong to source vs target.
    let mut membership: Vec<u32> = vec![0; asg_s.records.len()];
    membership.extend(std::iter::repeat(1).take(asg_t.records.len()));
    let cell_of: Vec<u32> = asg_s.cells.iter().chain(asg_t.cells.iter()).copied().collect();
    let weights: Vec<f64> = asg_s
        .records
        .iter()
        .chain(asg_t.records.iter())
        .map(|r| r.weight)
        .collect();
    let stat = |perm: &[u32]| {
        let mut cs = vec![0.0f64; m];
        let mut ct = vec![0.0f64; m];
        for i in 0..perm.len() {
            if perm[i] == 0 {
                cs[cell_of[i] as usize] += weights[i];
            } else {
                ct[cell_of[i] as usize] += weights[i];
            }
        }
        two_sample_g(&cs, &ct, alpha_s).0
    };
    let stream = derive_seed(config.seed, "origins.selection");
    let p_value = shuffle_pvalue(&membership, g, &stat, config.n_permutations, stream);

    let n_s: f64 = counts_s.iter().sum();
    let n_t: f64 = counts_t.iter().sum();
    let effect_size_nats = g / (n_s + n_t);

    let labels = resolver.labels();
    let raw_s: ProbTable = labels
        .iter()
        .enumerate()
        .filter(|(a, _)| counts_s[*a] > 0.0 || counts_t[*a] > 0.0)
        .map(|(a, l)| (l.clone(), counts_s[a] / n_s))
        .collect();
    let raw_t: ProbTable = labels
        .iter()
        .enumerate()
        .filter(|(a, _)| counts_s[*a] > 0.0 || counts_t[*a] > 0.0)
        .map(|(a, l)| (l.clone(), counts_t[a] / n_t))
        .collect();
    let kl_text = match kl_divergence(&raw_s, &raw_t) {
        Ok(v) => format!("KL {v:.4} nats"),
        Err(_) => {
            let qs: ProbTable =
                labels.iter().cloned().zip(smooth_probs(&counts_s, alpha_s)).collect();
            let qt: ProbTable =
                labels.iter().cloned().zip(smooth_probs(&counts_t, alpha_s)).collect();
            let v = kl_divergence(&qs, &qt).unwrap_or(f64::INFINITY);
            format!("KL {v:.4} nats (smoothed)")
        }
    };
    let mut evidence = format!(
        "source marginal ({}) vs target-sample marginal ({}); {kl_text}; n {n_s} vs {n_t}",
        fmt_marginal(labels, &counts_s.iter().map(|c| c / n_s).collect::<Vec<_>>()),
        fmt_marginal(labels, &counts_t.iter().map(|c| c / n_t).collect::<Vec<_>>()),
    );
    if untagged {
        evidence.push_str("; note: no source-split tags, all records treated as source");
    }

    let per_cell: BTreeMap<String, f64> = labels
        .iter()
        .cloned()
        .zip(per_cell_vals)
        .collect();

    Ok(OriginFinding {
        origin: BiasOrigin::SelectionBias,
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        evidence,
        caveat: DIAGNOSIS_CAVEAT.to_string(),
    })
}

/// Label bias: do the source gold labels diverge from a trusted reference
/// distribution? Q(Y_source | A) vs P(Y | A). Undetectable without external
/// ground truth, which is why the reference is a required argument.
pub fn label_bias_check(
    source: &Dataset,
    trusted: &IdealDistribution,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    if source.outcome_kind == OutcomeKind::Continuous {
        return Err(Error::Validation(
            "label bias check needs categorical outcomes; bin the outcome upstream".into(),
        ));
    }
    let resolver = AttributeResolver::build(attribute, &[source])?;
    let (records, untagged) = source_records(source);
    let asg = assign_cells(records.iter().copied(), &resolver);
    if asg.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no source records carry attribute '{}'",
            attribute.name
        )));
    }

    let support = source.outcome_support();
    let support_index: BTreeMap<&str, u32> = support
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let outcomes: Vec<u32> = asg
        .records
        .iter()
        .map(|r| support_index[r.y_true.as_label().expect("categorical outcome")])
        .collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let n_cells = asg.labels.len();
    let counts =
        CountMatrix::from_assignment(&asg.cells, &outcomes, &weights, n_cells, support.len());

    let pop: Vec<(usize, String)> = asg
        .labels
        .iter()
        .enumerate()
        .filter(|(i, _)| counts.cell_totals[*i] > 0.0)
        .map(|(i, l)| (i, l.clone()))
        .collect();
    let pop_labels: Vec<String> = pop.iter().map(|(_, l)| l.clone()).collect();
    let resolved = trusted.resolve(&pop_labels, &support)?;

    let uniform_row = vec![1.0 / support.len() as f64; support.len()];
    let mut rows = vec![uniform_row; n_cells];
    for (i, label) in &pop {
        rows[*i] = support.iter().map(|s| resolved[label][s]).collect();
    }

    let alpha_s = config.smoothing_alpha;
    let (g, per_cell_g) = g_vs_ideal_rows(&counts, &rows, alpha_s);
    let stream = derive_seed(config.seed, "origins.label");
    let p_value = ideal_draw_pvalue(
        &asg.cells,
        &weights,
        &rows,
        n_cells,
        support.len(),
        g,
        &|m| g_vs_ideal_rows(m, &rows, alpha_s).0,
        config.n_permutations,
        stream,
    );
    let n_total: f64 = counts.cell_totals.iter().sum();
    let effect_size_nats = g / n_total;

    // The most divergent cell and its most divergent outcome, for the evidence line.
    let mut evidence = String::from("gold-label distribution vs trusted reference");
    if let Some((i, label)) = pop
        .iter()
        .max_by(|a, b| per_cell_g[a.0].partial_cmp(&per_cell_g[b.0]).unwrap())
    {
        let n_a = counts.cell_totals[*i];
        let raw: Vec<f64> = counts.row(*i).iter().map(|c| c / n_a).collect();
        if let Some((y, _)) = support
            .iter()
            .enumerate()
            .max_by(|a, b| {
                let da = (raw[a.0] - rows[*i][a.0]).abs();
                let db = (raw[b.0] - rows[*i][b.0]).abs();
                da.partial_cmp(&db).unwrap()
            })
        {
            evidence = format!(
                "largest gap in cell '{label}': observed P({}) {:.3} vs reference {:.3}; aggregate G {g:.4} over {} cell(s)",
                support[y], raw[y], rows[*i][y], pop.len()
            );
        }
    }
    if untagged {
        evidence.push_str("; note: no source-split tags, all records treated as source");
    }

    let per_cell: BTreeMap<String, f64> =
        pop.iter().map(|(i, l)| (l.clone(), per_cell_g[*i])).collect();

    Ok(OriginFinding {
        origin: BiasOrigin::LabelBias,
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        evidence,
        caveat: DIAGNOSIS_CAVEAT.to_string(),
    })
}

/// Overamplification: does the predicted conditional distribution exaggerate
/// the association already present in the training labels?
/// Q(Ŷ_source | A) vs Q(Y_source | A) on the same records; significance via
/// the paired swap test (under the null the gold/predicted pair is
/// exchangeable within each record).
pub fn overamplification_check(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    if dataset.outcome_kind == OutcomeKind::Continuous {
        return Err(Error::Validation(
            "overamplification check needs categorical outcomes; use error disparity for continuous outcomes".into(),
        ));
    }
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let sources: Vec<&PredictionRecord> =
        dataset.records.iter().filter(|r| r.split == Split::Source).collect();
    if sources.is_empty() {
        return Err(Error::EmptyDistribution(
            "overamplification needs source-split records carrying gold labels and predictions".into(),
        ));
    }
    let asg = assign_cells(sources.iter().copied(), &resolver);
    if asg.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no source records carry attribute '{}'",
            attribute.name
        )));
    }

    let support = dataset.outcome_support();
    let support_index: BTreeMap<&str, u32> = support
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let true_of: Vec<u32> = asg
        .records
        .iter()
        .map(|r| support_index[r.y_true.as_label().expect("categorical outcome")])
        .collect();
    let pred_of: Vec<u32> = asg
        .records
        .iter()
        .map(|r| support_index[r.y_pred.as_label().expect("categorical outcome")])
        .collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let n_cells = asg.labels.len();
    let k = support.len();
    let pred = CountMatrix::from_assignment(&asg.cells, &pred_of, &weights, n_cells, k);
    let truth = CountMatrix::from_assignment(&asg.cells, &true_of, &weights, n_cells, k);

    let alpha_s = config.smoothing_alpha;
    let (g, per_cell_g) = g_between(&pred, &truth, alpha_s);
    let stream = derive_seed(config.seed, "origins.overamp");
    let p_value = swap_pvalue(
        &asg.cells,
        &true_of,
        &pred_of,
        &weights,
        n_cells,
        k,
        g,
        &|p, t| g_between(p, t, alpha_s).0,
        config.n_permutations,
        stream,
    );
    let n_total: f64 = pred.cell_totals.iter().sum();
    let effect_size_nats = g / n_total;

    // Direction per cell: find the outcome this cell over-represents in its
    // training labels relative to the pooled label distribution, then ask
    // whether predictions push that outcome further (amplified) or back
    // toward the pool (attenuated).
    let pooled: Vec<f64> = (0..k)
        .map(|y| (0..n_cells).map(|a| truth.row(a)[y]).sum::<f64>() / n_total)
        .collect();
    let mut parts = Vec::new();
    for a in 0..n_cells {
        let n_a = truth.cell_totals[a];
        if n_a == 0.0 {
            continue;
        }
        let t_rate: Vec<f64> = truth.row(a).iter().map(|c| c / n_a).collect();
        let p_rate: Vec<f64> = pred.row(a).iter().map(|c| c / n_a).collect();
        let lean = (0..k)
            .max_by(|x, y| {
                (t_rate[*x] - pooled[*x]).partial_cmp(&(t_rate[*y] - pooled[*y])).unwrap()
            })
            .unwrap();
        let delta = p_rate[lean] - t_rate[lean];
        let direction = if delta > 1e-9 {
            "amplified"
        } else if delta < -1e-9 {
            "attenuated"
        } else {
            "unchanged"
        };
        parts.push(format!(
            "cell '{}': lean outcome '{}' training {:.3} predicted {:.3} ({direction})",
            asg.labels[a], support[lean], t_rate[lean], p_rate[lean]
        ));
    }
    let evidence = format!("predicted vs training label distribution; {}", parts.join("; "));

    let per_cell: BTreeMap<String, f64> = asg
        .labels
        .iter()
        .enumerate()
        .filter(|(a, _)| truth.cell_totals[*a] > 0.0)
        .map(|(a, l)| (l.clone(), per_cell_g[a]))
        .collect();

    Ok(OriginFinding {
        origin: BiasOrigin::Overamplification,
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        evidence,
        caveat: DIAGNOSIS_CAVEAT.to_string(),
    })
}

/// The interaction matrix verdict plus all component findings.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosisMatrix {
    pub attribute: String,
    pub findings: Vec<OriginFinding>,
    /// false when the selection check flagged; None when it could not run.
    pub representative: Option<bool>,
    /// false when the label check flagged; None when it could not run.
    pub labels_correct: Option<bool>,
    /// The interaction-matrix cell: which of selection/label bias the sample
    /// is consistent with.
    pub diagnosis: Vec<BiasOrigin>,
    /// Every flagged origin, including overamplification and semantic bias.
    pub flagged_origins: Vec<BiasOrigin>,
    /// Origins that could not be checked for lack of inputs.
    pub unchecked: Vec<BiasOrigin>,
    pub caveat: String,
}

/// Run the selection, label, and overamplification checks (where inputs
/// allow), fold in an externally produced semantic finding, and map the
/// selection × label outcome onto the interaction matrix.
pub fn diagnose(
    source: &Dataset,
    target_reference: Option<&TargetReference<'_>>,
    trusted_reference: Option<&IdealDistribution>,
    semantic: Option<OriginFinding>,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<DiagnosisMatrix> {
    let mut findings = Vec::new();
    let mut unchecked = Vec::new();

    let selection = match target_reference {
        Some(t) => Some(selection_bias_check(source, t, attribute, config)?),
        None => {
            unchecked.push(BiasOrigin::SelectionBias);
            None
        }
    };
    let label = match (trusted_reference, source.outcome_kind) {
        (Some(t), OutcomeKind::Categorical) => {
            Some(label_bias_check(source, t, attribute, config)?)
        }
        _ => {
            unchecked.push(BiasOrigin::LabelBias);
            None
        }
    };
    let overamp = match source.outcome_kind {
        OutcomeKind::Categorical => Some(overamplification_check(source, attribute, config)?),
        OutcomeKind::Continuous => {
            unchecked.push(BiasOrigin::Overamplification);
            None
        }
    };

    let representative = selection.as_ref().map(|f| !f.flagged);
    let labels_correct = label.as_ref().map(|f| !f.flagged);

    let mut diagnosis = Vec::new();
    if selection.as_ref().is_some_and(|f| f.flagged) {
        diagnosis.push(BiasOrigin::SelectionBias);
    }
    if label.as_ref().is_some_and(|f| f.flagged) {
        diagnosis.push(BiasOrigin::LabelBias);
    }
    diagnosis.sort();

    if let Some(f) = selection {
        findings.push(f);
    }
    if let Some(f) = label {
        findings.push(f);
    }
    if let Some(f) = overamp {
        findings.push(f);
    }
    match semantic {
        Some(f) => findings.push(f),
        None => unchecked.push(BiasOrigin::SemanticBias),
    }

    let mut flagged_origins: Vec<BiasOrigin> =
        findings.iter().filter(|f| f.flagged).map(|f| f.origin).collect();
    flagged_origins.sort();
    flagged_origins.dedup();
    unchecked.sort();

    Ok(DiagnosisMatrix {
        attribute: attribute.name.clone(),
        findings,
        representative,
        labels_correct,
        diagnosis,
        flagged_origins,
        unchecked,
        caveat: DIAGNOSIS_CAVEAT.to_string(),
    })
}
