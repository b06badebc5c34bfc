//! Audit report assembly: the JSON document written by `biaslens audit`,
//! the countermeasure recommendations derived from flagged origins, and the
//! deterministic markdown rendering.

use std::collections::BTreeSet;

use serde::Serialize;
use sha2::{Digest, Sha256};

use biaslens_core::disparity::DisparityReport;
use biaslens_core::origins::{BiasOrigin, DiagnosisMatrix, OriginFinding};

/// Schema file shipped with the binary; every report is checked against it
/// before being written.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub const SCHEMA_VERSION: &str = "1";

/// Fixed limitation statement carried by every report: only logged,
/// configured attributes can be audited.
pub const KNOWN_UNKNOWNS_STATEMENT: &str = "This audit covers only the attributes listed above. \
Attributes that were never logged cannot be audited, and this report makes no claim about \
disparities along them.";

#[derive(Clone, Debug, Serialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub timestamp: String,
}

/// One audited attribute: both disparity checks plus the origin diagnosis.
/// `outcome_disparity` is None when the outcome is continuous (the check is
/// defined over categorical outcome distributions).
#[derive(Clone, Debug, Serialize)]
pub struct AttributeSection {
    pub attribute: String,
    pub outcome_disparity: Option<DisparityReport>,
    pub error_disparity: DisparityReport,
    pub origins: DiagnosisMatrix,
}

#[derive(Clone, Debug, Serialize)]
pub struct Recommendation {
    pub origin: BiasOrigin,
    pub actions: Vec<String>,
}

/// Structured documentation prompts; the tool nudges toward a data statement
/// rather than generating one.
#[derive(Clone, Debug, Serialize)]
pub struct DataStatementStub {
    pub curation_rationale: String,
    pub language_variety: String,
    pub speaker_demographics: String,
    pub annotator_demographics: String,
    pub speech_situation: String,
    pub text_characteristics: String,
}

impl Default for DataStatementStub {
    fn default() -> Self {
        DataStatementStub {
            curation_rationale: "Why were these texts selected, and by what process?".into(),
            language_variety: "Which language(s) and varieties do the texts represent?".into(),
            speaker_demographics: "Who produced the texts (age, gender, region, ...)?".into(),
            annotator_demographics: "Who labeled the data, and how were they recruited and trained?"
                .into(),
            speech_situation: "In what context were the texts produced (time, place, modality, intended audience)?"
                .into(),
            text_characteristics: "What genre, topics, and structure do the texts have?".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KnownUnknowns {
    pub checked_attributes: Vec<String>,
    pub statement: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub schema_version: String,
    pub metadata: ReportMetadata,
    pub attributes: Vec<AttributeSection>,
    /// Embedding-association finding; None when no embeddings were supplied.
    pub semantic: Option<OriginFinding>,
    /// True when any disparity check or origin check flagged.
    pub flagged: bool,
    pub flagged_origins: Vec<BiasOrigin>,
    pub recommendations: Vec<Recommendation>,
    pub data_statement: DataStatementStub,
    pub known_unknowns: KnownUnknowns,
    pub warnings: Vec<String>,
}

/// Countermeasures for one flagged origin. A pure mapping: the same origin
/// always yields the same action list.
pub fn actions_for(origin: BiasOrigin) -> Vec<String> {
    let actions: &[&str] = match origin {
        BiasOrigin::LabelBias => &[
            "apply post-stratification so the weighted label marginal matches the trusted reference",
            "retrain annotators against the trusted reference and relabel",
        ],
        BiasOrigin::SelectionBias => &[
            "use stratified sampling to match the source sample to the target population",
            "apply post-stratification / reweighting toward the target marginal",
        ],
        BiasOrigin::Overamplification => &[
            "synthetically match distributions across attribute cells before retraining",
            "adding a disparity penalty to the training cost function is a model-level change out of scope for this toolkit",
        ],
        BiasOrigin::SemanticBias => &[
            "retrain or retrofit embeddings with the flagged associations removed",
        ],
    };
    actions.iter().map(|s| s.to_string()).collect()
}

/// Assemble the full report from per-attribute sections and the optional
/// semantic finding; computes the flag summary and recommendations.
pub fn build_report(
    metadata: ReportMetadata,
    attributes: Vec<AttributeSection>,
    semantic: Option<OriginFinding>,
    warnings: Vec<String>,
) -> AuditReport {
    let mut origin_set: BTreeSet<BiasOrigin> = BTreeSet::new();
    for section in &attributes {
        origin_set.extend(section.origins.flagged_origins.iter().copied());
    }
    if semantic.as_ref().is_some_and(|f| f.flagged) {
        origin_set.insert(BiasOrigin::SemanticBias);
    }
    let flagged_origins: Vec<BiasOrigin> = origin_set.into_iter().collect();

    let any_disparity = attributes.iter().any(|s| {
        s.outcome_disparity.as_ref().is_some_and(|d| d.flagged) || s.error_disparity.flagged
    });
    let flagged = any_disparity || !flagged_origins.is_empty();

    let recommendations = flagged_origins
        .iter()
        .map(|&origin| Recommendation { origin, actions: actions_for(origin) })
        .collect();

    let checked_attributes: Vec<String> =
        attributes.iter().map(|s| s.attribute.clone()).collect();

    AuditReport {
        schema_version: SCHEMA_VERSION.to_string(),
        metadata,
        attributes,
        semantic,
        flagged,
        flagged_origins,
        recommendations,
        data_statement: DataStatementStub::default(),
        known_unknowns: KnownUnknowns {
            checked_attributes,
            statement: KNOWN_UNKNOWNS_STATEMENT.to_string(),
        },
        warnings,
    }
}

/// Hash of the raw config file bytes, recorded in report metadata so a
/// report can be tied to the exact configuration that produced it.
pub fn config_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

/// RFC 3339 timestamp; honors SOURCE_DATE_EPOCH (unix seconds) so runs can
/// be made byte-reproducible.
pub fn report_timestamp() -> String {
    use chrono::{DateTime, SecondsFormat, Utc};
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|raw| raw.parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn origin_label(origin: BiasOrigin) -> &'static str {
    match origin {
        BiasOrigin::LabelBias => "label_bias",
        BiasOrigin::SelectionBias => "selection_bias",
        BiasOrigin::Overamplification => "overamplification",
        BiasOrigin::SemanticBias => "semantic_bias",
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn origin_list(origins: &[BiasOrigin]) -> String {
    if origins.is_empty() {
        "none".to_string()
    } else {
        origins.iter().map(|&o| origin_label(o)).collect::<Vec<_>>().join(", ")
    }
}

fn check_row(out: &mut String, name: &str, stat: f64, p: f64, effect: f64, flagged: bool) {
    out.push_str(&format!(
        "| {name} | {stat:.6} | {p:.4} | {effect:.6} | {} |\n",
        yes_no(flagged)
    ));
}

/// Deterministic markdown rendering of the report: same report, same bytes.
pub fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    out.push_str("# Bias audit report\n\n");
    out.push_str(&format!("- Tool version: {}\n", report.metadata.tool_version));
    out.push_str(&format!("- Config hash: {}\n", report.metadata.config_hash));
    out.push_str(&format!("- Seed: {}\n", report.metadata.seed));
    out.push_str(&format!("- Generated: {}\n\n", report.metadata.timestamp));

    out.push_str("## Summary\n\n");
    out.push_str(&format!("- Flags raised: {}\n", yes_no(report.flagged)));
    out.push_str(&format!("- Flagged origins: {}\n\n", origin_list(&report.flagged_origins)));

    for section in &report.attributes {
        out.push_str(&format!("## Attribute: {}\n\n", section.attribute));
        out.push_str("| check | statistic (nats) | p-value | effect (nats/obs) | flagged |\n");
        out.push_str("|---|---:|---:|---:|---|\n");
        match &section.outcome_disparity {
            Some(d) => check_row(
                &mut out,
                "outcome disparity",
                d.divergence.statistic,
                d.p_value,
                d.effect_size_nats,
                d.flagged,
            ),
            None => out.push_str("| outcome disparity | - | - | - | not applicable |\n"),
        }
        let e = &section.error_disparity;
        check_row(
            &mut out,
            "error disparity",
            e.divergence.statistic,
            e.p_value,
            e.effect_size_nats,
            e.flagged,
        );
        for finding in &section.origins.findings {
            check_row(
                &mut out,
                &format!("{} origin", origin_label(finding.origin)),
                finding.divergence.statistic,
                finding.p_value,
                finding.effect_size_nats,
                finding.flagged,
            );
        }
        out.push('\n');

        let fmt_tristate = |v: Option<bool>| match v {
            Some(b) => yes_no(b),
            None => "unknown",
        };
        out.push_str(&format!(
            "- Sample representative: {}; labels correct: {}\n",
            fmt_tristate(section.origins.representative),
            fmt_tristate(section.origins.labels_correct)
        ));
        out.push_str(&format!(
            "- Consistent with: {}\n",
            origin_list(&section.origins.diagnosis)
        ));
        out.push_str(&format!(
            "- Unchecked origins: {}\n",
            origin_list(&section.origins.unchecked)
        ));
        for finding in &section.origins.findings {
            out.push_str(&format!(
                "- Evidence ({}): {}\n",
                origin_label(finding.origin),
                finding.evidence
            ));
        }
        out.push_str(&format!("- Caveat: {}\n\n", section.origins.caveat));
    }

    out.push_str("## Semantic probes\n\n");
    match &report.semantic {
        Some(f) => {
            out.push_str("| check | statistic | p-value | flagged |\n");
            out.push_str("|---|---:|---:|---|\n");
            out.push_str(&format!(
                "| embedding associations | {:.6} | {:.4} | {} |\n\n",
                f.divergence.statistic,
                f.p_value,
                yes_no(f.flagged)
            ));
            out.push_str(&format!("- Evidence: {}\n\n", f.evidence));
        }
        None => out.push_str("Not run: no embeddings supplied.\n\n"),
    }

    out.push_str("## Recommended countermeasures\n\n");
    if report.recommendations.is_empty() {
        out.push_str("No origins flagged; no countermeasures recommended.\n\n");
    } else {
        for rec in &report.recommendations {
            out.push_str(&format!("- {}:\n", origin_label(rec.origin)));
            for action in &rec.actions {
                out.push_str(&format!("  - {action}\n"));
            }
        }
        out.push('\n');
    }

    out.push_str("## Data statement stub\n\n");
    let ds = &report.data_statement;
    out.push_str(&format!("- Curation rationale: {}\n", ds.curation_rationale));
    out.push_str(&format!("- Language variety: {}\n", ds.language_variety));
    out.push_str(&format!("- Speaker demographics: {}\n", ds.speaker_demographics));
    out.push_str(&format!("- Annotator demographics: {}\n", ds.annotator_demographics));
    out.push_str(&format!("- Speech situation: {}\n", ds.speech_situation));
    out.push_str(&format!("- Text characteristics: {}\n\n", ds.text_characteristics));

    out.push_str("## Coverage\n\n");
    out.push_str(&format!(
        "Checked attributes: {}.\n\n",
        if report.known_unknowns.checked_attributes.is_empty() {
            "none".to_string()
        } else {
            report.known_unknowns.checked_attributes.join(", ")
        }
    ));
    out.push_str(&format!("{}\n", report.known_unknowns.statement));

    if !report.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for warning in &report.warnings {
            out.push_str(&format!("- {warning}\n"));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use biaslens_core::stats::{DivergenceKind, DivergenceResult};
    use std::collections::BTreeMap;

    fn divergence(stat: f64) -> DivergenceResult {
        DivergenceResult { statistic: stat, per_cell: BTreeMap::new(), kind: DivergenceKind::Kl }
    }

    fn finding(origin: BiasOrigin, flagged: bool) -> OriginFinding {
        OriginFinding {
            origin,
            divergence: divergence(0.2),
            p_value: if flagged { 0.001 } else { 0.8 },
            effect_size_nats: 0.2,
            flagged,
            evidence: "test evidence".into(),
            caveat: "test caveat".into(),
        }
    }

    fn disparity(flagged: bool) -> DisparityReport {
        DisparityReport {
            kind: biaslens_core::disparity::DisparityKind::Error,
            attribute: "g".into(),
            divergence: divergence(1.0),
            p_value: if flagged { 0.001 } else { 0.9 },
            effect_size_nats: 0.05,
            flagged,
            per_cell_detail: BTreeMap::new(),
            warnings: vec![],
        }
    }

    fn matrix(flagged: &[BiasOrigin]) -> DiagnosisMatrix {
        DiagnosisMatrix {
            attribute: "g".into(),
            findings: flagged.iter().map(|&o| finding(o, true)).collect(),
            representative: Some(!flagged.contains(&BiasOrigin::SelectionBias)),
            labels_correct: Some(!flagged.contains(&BiasOrigin::LabelBias)),
            diagnosis: flagged
                .iter()
                .copied()
                .filter(|o| {
                    matches!(o, BiasOrigin::SelectionBias | BiasOrigin::LabelBias)
                })
                .collect(),
            flagged_origins: flagged.to_vec(),
            unchecked: vec![BiasOrigin::SemanticBias],
            caveat: "test caveat".into(),
        }
    }

    fn metadata() -> ReportMetadata {
        ReportMetadata {
            tool_version: "0.0.0".into(),
            config_hash: "sha256:00".into(),
            seed: 7,
            timestamp: "2020-01-01T00:00:00Z".into(),
        }
    }

    fn section(flagged: &[BiasOrigin]) -> AttributeSection {
        AttributeSection {
            attribute: "g".into(),
            outcome_disparity: Some(disparity(false)),
            error_disparity: disparity(false),
            origins: matrix(flagged),
        }
    }

    #[test]
    fn recommendations_follow_flagged_origins() {
        let report = build_report(
            metadata(),
            vec![section(&[BiasOrigin::LabelBias, BiasOrigin::SelectionBias])],
            None,
            vec![],
        );
        assert!(report.flagged);
        assert_eq!(
            report.flagged_origins,
            vec![BiasOrigin::LabelBias, BiasOrigin::SelectionBias]
        );
        let all: Vec<&str> = report
            .recommendations
            .iter()
            .flat_map(|r| r.actions.iter().map(|a| a.as_str()))
            .collect();
        assert!(all.iter().any(|a| a.contains("post-stratification")));
        assert!(all.iter().any(|a| a.contains("retrain annotators")));
        assert!(all.iter().any(|a| a.contains("stratified sampling")));
    }

    #[test]
    fn overamp_recommendation_includes_cost_function_scope_note() {
        let actions = actions_for(BiasOrigin::Overamplification);
        assert!(actions.iter().any(|a| a.contains("synthetically match distributions")));
        assert!(actions.iter().any(|a| a.contains("cost function") && a.contains("out of scope")));
    }

    #[test]
    fn semantic_recommendation_mentions_retrofit() {
        let actions = actions_for(BiasOrigin::SemanticBias);
        assert!(actions.iter().any(|a| a.contains("retrain or retrofit embeddings")));
    }

    #[test]
    fn clean_report_is_unflagged_with_no_recommendations() {
        let report = build_report(metadata(), vec![section(&[])], None, vec![]);
        assert!(!report.flagged);
        assert!(report.flagged_origins.is_empty());
        assert!(report.recommendations.is_empty());
    }

    #[test]
    fn disparity_flag_alone_raises_the_report_flag() {
        let mut s = section(&[]);
        s.error_disparity = disparity(true);
        let report = build_report(metadata(), vec![s], None, vec![]);
        assert!(report.flagged);
        assert!(report.flagged_origins.is_empty());
    }

    #[test]
    fn semantic_flag_feeds_the_origin_union() {
        let report = build_report(
            metadata(),
            vec![section(&[])],
            Some(finding(BiasOrigin::SemanticBias, true)),
            vec![],
        );
        assert_eq!(report.flagged_origins, vec![BiasOrigin::SemanticBias]);
    }

    #[test]
    fn report_json_validates_against_shipped_schema() {
        let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        for report in [
            build_report(metadata(), vec![section(&[BiasOrigin::Overamplification])], None, vec![]),
            build_report(
                metadata(),
                vec![],
                Some(finding(BiasOrigin::SemanticBias, false)),
                vec!["a warning".into()],
            ),
        ] {
            let value = serde_json::to_value(&report).unwrap();
            let errors = crate::schema::validate(&schema, &value);
            assert!(errors.is_empty(), "schema violations: {errors:?}");
        }
    }

    #[test]
    fn known_unknowns_statement_is_fixed_and_lists_attributes() {
        let report = build_report(metadata(), vec![section(&[])], None, vec![]);
        assert_eq!(report.known_unknowns.checked_attributes, vec!["g".to_string()]);
        assert_eq!(report.known_unknowns.statement, KNOWN_UNKNOWNS_STATEMENT);
    }

    #[test]
    fn markdown_is_deterministic_and_structured() {
        let report = build_report(
            metadata(),
            vec![section(&[BiasOrigin::SelectionBias])],
            Some(finding(BiasOrigin::SemanticBias, false)),
            vec!["something to note".into()],
        );
        let a = render_markdown(&report);
        let b = render_markdown(&report);
        assert_eq!(a, b);
        assert!(a.contains("# Bias audit report"));
        assert!(a.contains("## Attribute: g"));
        assert!(a.contains("| selection_bias origin |"));
        assert!(a.contains("## Recommended countermeasures"));
        assert!(a.contains(KNOWN_UNKNOWNS_STATEMENT));
        assert!(a.contains("- something to note"));
    }

    #[test]
    fn config_hash_is_stable_and_prefixed() {
        let h = config_hash(b"attributes = [\"g\"]");
        assert!(h.starts_with("sha256:"));
        assert_eq!(h, config_hash(b"attributes = [\"g\"]"));
        assert_ne!(h, config_hash(b"attributes = [\"x\"]"));
    }

    #[test]
    fn timestamp_honors_source_date_epoch() {
        // process-wide env var: set and restore around the assertion
        std::env::set_var("SOURCE_DATE_EPOCH", "0");
        let t = report_timestamp();
        std::env::remove_var("SOURCE_DATE_EPOCH");
        assert_eq!(t, "1970-01-01T00:00:00Z");
    }
}
