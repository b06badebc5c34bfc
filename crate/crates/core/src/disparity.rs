//! Detection of the two disparity consequences: predicted outcomes diverging
//! from an application ideal, and model error distributed unequally across
//! attribute cells.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AttributeSpec, AuditConfig, Dataset, OutcomeKind, Split};
use crate::rng::derive_seed;
use crate::stats::{
    assign_cells, error_of, g_vs_ideal_rows, ideal_draw_pvalue, shuffle_pvalue, smooth_probs,
    AttributeResolver, CellAssignment, CountMatrix, DivergenceKind, DivergenceResult,
    IdealDistribution, ProbTable, CORRECT_LABEL, ERROR_LABEL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DisparityKind {
    Outcome,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellDetail {
    /// Total record weight in the cell.
    pub n: f64,
    pub observed: ProbTable,
    pub ideal: ProbTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DisparityReport {
    pub kind: DisparityKind,
    pub attribute: String,
    pub divergence: DivergenceResult,
    pub p_value: f64,
    /// Aggregate divergence per unit of observation weight (nats).
    pub effect_size_nats: f64,
    pub flagged: bool,
    pub per_cell_detail: BTreeMap<String, CellDetail>,
    pub warnings: Vec<String>,
}

fn flag(p_value: f64, effect: f64, config: &AuditConfig) -> bool {
    p_value < config.alpha && effect >= config.effect_floor
}

fn populated(counts: &CountMatrix, labels: &[String]) -> Vec<(usize, String)> {
    labels
        .iter()
        .enumerate()
        .filter(|(i, _)| counts.cell_totals[*i] > 0.0)
        .map(|(i, l)| (i, l.clone()))
        .collect()
}

fn require_two_cells(cells: &[(usize, String)], attribute: &str) -> Result<()> {
    if cells.len() < 2 {
        return Err(Error::Degenerate(format!(
            "attribute '{attribute}' has fewer than two populated cells; disparity over one group is undefined"
        )));
    }
    Ok(())
}

/// Does the predicted outcome distribution per attribute cell diverge from
/// the ideal? Audits the target split when present, otherwise falls back to
/// the source split with a warning. Significance comes from redrawing
/// outcomes from the ideal per cell (the null in which no disparity exists).
pub fn outcome_disparity(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    ideal: &IdealDistribution,
    config: &AuditConfig,
) -> Result<DisparityReport> {
    if dataset.outcome_kind == OutcomeKind::Continuous {
        return Err(Error::Validation(
            "outcome disparity needs categorical outcomes; bin the outcome upstream or audit error disparity instead".into(),
        ));
    }
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let mut warnings = Vec::new();

    let mut asg = assign_cells(
        dataset.records.iter().filter(|r| r.split == Split::Target),
        &resolver,
    );
    if asg.records.is_empty() {
        warnings.push(
            "no target-split records; auditing the source split as the deployment sample".into(),
        );
        asg = assign_cells(
            dataset.records.iter().filter(|r| r.split == Split::Source),
            &resolver,
        );
    }
    if asg.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no records carry attribute '{}'",
            attribute.name
        )));
    }
    if asg.excluded > 0 {
        warnings.push(format!(
            "{} record(s) missing attribute '{}' were excluded",
            asg.excluded, attribute.name
        ));
    }

    let support = dataset.outcome_support();
    let support_index: BTreeMap<&str, u32> = support
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let outcomes: Vec<u32> = asg
        .records
        .iter()
        .map(|r| support_index[r.y_pred.as_label().expect("categorical outcome")])
        .collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let n_cells = asg.labels.len();
    let counts =
        CountMatrix::from_assignment(&asg.cells, &outcomes, &weights, n_cells, support.len());

    let pop = populated(&counts, &asg.labels);
    require_two_cells(&pop, &attribute.name)?;
    let pop_labels: Vec<String> = pop.iter().map(|(_, l)| l.clone()).collect();
    let resolved = ideal.resolve(&pop_labels, &support)?;

    let uniform_row = vec![1.0 / support.len() as f64; support.len()];
    let mut rows: Vec<Vec<f64>> = vec![uniform_row; n_cells];
    for (i, label) in &pop {
        rows[*i] = support.iter().map(|s| resolved[label][s]).collect();
    }

    let alpha_s = config.smoothing_alpha;
    let (g, per_cell_g) = g_vs_ideal_rows(&counts, &rows, alpha_s);
    let stream = derive_seed(config.seed, "disparity.outcome");
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

    let mut per_cell = BTreeMap::new();
    let mut per_cell_detail = BTreeMap::new();
    for (i, label) in &pop {
        per_cell.insert(label.clone(), per_cell_g[*i]);
        let obs = smooth_probs(counts.row(*i), alpha_s);
        per_cell_detail.insert(
            label.clone(),
            CellDetail {
                n: counts.cell_totals[*i],
                observed: support.iter().cloned().zip(obs).collect(),
                ideal: resolved[label].clone(),
                mean_error: None,
            },
        );
    }

    Ok(DisparityReport {
        kind: DisparityKind::Outcome,
        attribute: attribute.name.clone(),
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        per_cell_detail,
        warnings,
    })
}

/// Is model error spread unequally across attribute cells? The ideal is a
/// shared error distribution: every cell carries the pooled error rate
/// (categorical outcomes) or the pooled mean absolute error (continuous).
pub fn error_disparity(
    dataset: &Dataset,
    attribute: &AttributeSpec,
    config: &AuditConfig,
) -> Result<DisparityReport> {
    let resolver = AttributeResolver::build(attribute, &[dataset])?;
    let asg = assign_cells(dataset.records.iter(), &resolver);
    if asg.records.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no records carry attribute '{}'",
            attribute.name
        )));
    }
    let mut warnings = Vec::new();
    if asg.excluded > 0 {
        warnings.push(format!(
            "{} record(s) missing attribute '{}' were excluded",
            asg.excluded, attribute.name
        ));
    }
    match dataset.outcome_kind {
        OutcomeKind::Categorical => categorical_error_disparity(&asg, attribute, config, warnings),
        OutcomeKind::Continuous => continuous_error_disparity(&asg, attribute, config, warnings),
    }
}

fn categorical_error_disparity(
    asg: &CellAssignment<'_>,
    attribute: &AttributeSpec,
    config: &AuditConfig,
    warnings: Vec<String>,
) -> Result<DisparityReport> {
    let outcomes: Vec<u32> = asg.records.iter().map(|r| error_of(r) as u32).collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let n_cells = asg.labels.len();
    let counts = CountMatrix::from_assignment(&asg.cells, &outcomes, &weights, n_cells, 2);
    let pop = populated(&counts, &asg.labels);
    require_two_cells(&pop, &attribute.name)?;

    let n_total: f64 = counts.cell_totals.iter().sum();
    let pooled: Vec<f64> = (0..2)
        .map(|y| (0..n_cells).map(|a| counts.row(a)[y]).sum::<f64>() / n_total)
        .collect();
    let rows: Vec<Vec<f64>> = vec![pooled.clone(); n_cells];

    // Unsmoothed G: identical per-cell rates give exactly zero.
    let (g, per_cell_g) = g_vs_ideal_rows(&counts, &rows, 0.0);
    let stream = derive_seed(config.seed, "disparity.error");
    let stat = |perm: &[u32]| {
        let m = CountMatrix::from_assignment(perm, &outcomes, &weights, n_cells, 2);
        g_vs_ideal_rows(&m, &rows, 0.0).0
    };
    let p_value = shuffle_pvalue(&asg.cells, g, &stat, config.n_permutations, stream);
    let effect_size_nats = g / n_total;

    let support = [CORRECT_LABEL.to_string(), ERROR_LABEL.to_string()];
    let ideal_table: ProbTable = support.iter().cloned().zip(pooled.iter().copied()).collect();
    let mut per_cell = BTreeMap::new();
    let mut per_cell_detail = BTreeMap::new();
    for (i, label) in &pop {
        per_cell.insert(label.clone(), per_cell_g[*i]);
        let n = counts.cell_totals[*i];
        let observed: ProbTable = support
            .iter()
            .cloned()
            .zip(counts.row(*i).iter().map(|c| c / n))
            .collect();
        let rate = observed[ERROR_LABEL];
        per_cell_detail.insert(
            label.clone(),
            CellDetail { n, observed, ideal: ideal_table.clone(), mean_error: Some(rate) },
        );
    }

    Ok(DisparityReport {
        kind: DisparityKind::Error,
        attribute: attribute.name.clone(),
        divergence: DivergenceResult { statistic: g, per_cell, kind: DivergenceKind::LlrG },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        per_cell_detail,
        warnings,
    })
}

/// Quantile-bin boundaries (at most four bins) over pooled error values,
/// used to express a continuous error gap as a divergence in nats.
fn error_bin_edges(errors: &[f64]) -> Vec<f64> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut edges = Vec::new();
    for i in 1..4 {
        let e = sorted[(sorted.len() * i) / 4];
        if edges.last() != Some(&e) && e > sorted[0] {
            edges.push(e);
        }
    }
    edges
}

fn continuous_error_disparity(
    asg: &CellAssignment<'_>,
    attribute: &AttributeSpec,
    config: &AuditConfig,
    mut warnings: Vec<String>,
) -> Result<DisparityReport> {
    let errors: Vec<f64> = asg.records.iter().map(|r| error_of(r)).collect();
    let weights: Vec<f64> = asg.records.iter().map(|r| r.weight).collect();
    let n_cells = asg.labels.len();

    // Weighted per-cell means; the statistic is the widest gap between any
    // two cell means.
    let cell_means = |cells: &[u32]| -> Vec<Option<f64>> {
        let mut sum_w = vec![0.0; n_cells];
        let mut sum_we = vec![0.0; n_cells];
        for i in 0..cells.len() {
            let c = cells[i] as usize;
            sum_w[c] += weights[i];
            sum_we[c] += weights[i] * errors[i];
        }
        (0..n_cells).map(|c| (sum_w[c] > 0.0).then(|| sum_we[c] / sum_w[c])).collect()
    };
    let max_gap = |means: &[Option<f64>]| -> f64 {
        let present: Vec<f64> = means.iter().flatten().copied().collect();
        if present.len() < 2 {
            return 0.0;
        }
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };

    let observed_means = cell_means(&asg.cells);
    let pop: Vec<(usize, String)> = asg
        .labels
        .iter()
        .enumerate()
        .filter(|(i, _)| observed_means[*i].is_some())
        .map(|(i, l)| (i, l.clone()))
        .collect();
    require_two_cells(&pop, &attribute.name)?;

    let statistic = max_gap(&observed_means);
    let stream = derive_seed(config.seed, "disparity.error");
    let stat = |perm: &[u32]| max_gap(&cell_means(perm));
    let p_value = shuffle_pvalue(&asg.cells, statistic, &stat, config.n_permutations, stream);

    // Effect size in nats from the binned error distribution vs the pooled one.
    let edges = error_bin_edges(&errors);
    let n_bins = edges.len() + 1;
    let bin_of = |e: f64| edges.partition_point(|b| *b <= e) as u32;
    let bins: Vec<u32> = errors.iter().map(|e| bin_of(*e)).collect();
    let counts = CountMatrix::from_assignment(&asg.cells, &bins, &weights, n_cells, n_bins);
    let n_total: f64 = counts.cell_totals.iter().sum();
    let pooled: Vec<f64> = (0..n_bins)
        .map(|b| (0..n_cells).map(|a| counts.row(a)[b]).sum::<f64>() / n_total)
        .collect();
    let rows: Vec<Vec<f64>> = vec![pooled.clone(); n_cells];
    let (g_binned, _) = g_vs_ideal_rows(&counts, &rows, 0.0);
    let effect_size_nats = g_binned / n_total;
    warnings.push(
        "continuous errors: the statistic is the widest between-cell mean-absolute-error gap in outcome units; the effect size comes from the binned error distribution".into(),
    );

    let bin_labels: Vec<String> = if edges.is_empty() {
        vec!["all".into()]
    } else {
        let mut l = vec![format!("(-inf,{})", edges[0])];
        for w in edges.windows(2) {
            l.push(format!("[{},{})", w[0], w[1]));
        }
        l.push(format!("[{},inf)", edges[edges.len() - 1]));
        l
    };
    let ideal_table: ProbTable =
        bin_labels.iter().cloned().zip(pooled.iter().copied()).collect();
    let pooled_mean: f64 = errors
        .iter()
        .zip(&weights)
        .map(|(e, w)| e * w)
        .sum::<f64>()
        / n_total;

    let mut per_cell = BTreeMap::new();
    let mut per_cell_detail = BTreeMap::new();
    for (i, label) in &pop {
        let mean = observed_means[*i].unwrap();
        per_cell.insert(label.clone(), (mean - pooled_mean).abs());
        let n = counts.cell_totals[*i];
        per_cell_detail.insert(
            label.clone(),
            CellDetail {
                n,
                observed: bin_labels
                    .iter()
                    .cloned()
                    .zip(counts.row(*i).iter().map(|c| c / n))
                    .collect(),
                ideal: ideal_table.clone(),
                mean_error: Some(mean),
            },
        );
    }

    Ok(DisparityReport {
        kind: DisparityKind::Error,
        attribute: attribute.name.clone(),
        divergence: DivergenceResult { statistic, per_cell, kind: DivergenceKind::MeanGap },
        p_value,
        effect_size_nats,
        flagged: flag(p_value, effect_size_nats, config),
        per_cell_detail,
        warnings,
    })
}
