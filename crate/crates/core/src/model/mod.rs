//! Core data model: prediction records, datasets, attribute specifications,
//! and the audit configuration.

mod config;
mod ingest;

pub use config::{AuditConfig, ColumnMap, CsvAttrColumn, IdealSpec};
pub use ingest::{parse_records, write_csv, write_jsonl, RecordFormat};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold or predicted outcome: a class label or a real value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutcomeValue {
    Label(String),
    Value(f64),
}

impl OutcomeValue {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            OutcomeValue::Label(_) => OutcomeKind::Categorical,
            OutcomeValue::Value(_) => OutcomeKind::Continuous,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            OutcomeValue::Label(s) => Some(s),
            OutcomeValue::Value(_) => None,
        }
    }

    pub fn as_value(&self) -> Option<f64> {
        match self {
            OutcomeValue::Label(_) => None,
            OutcomeValue::Value(v) => Some(*v),
        }
    }
}

/// A protected-attribute value attached to a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Continuous(f64),
    Categorical(String),
}

impl AttributeValue {
    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeValue::Categorical(_) => AttributeKind::Categorical,
            AttributeValue::Continuous(_) => AttributeKind::Continuous,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Source,
    Target,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Source => write!(f, "source"),
            Split::Target => write!(f, "target"),
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

#[allow(clippy::trivially_copy_pass_by_ref)]
fn weight_is_default(w: &f64) -> bool {
    *w == 1.0
}

/// One labeled example with its model prediction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub y_true: OutcomeValue,
    pub y_pred: OutcomeValue,
    #[serde(default)]
    pub attrs: BTreeMap<String, AttributeValue>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "default_weight", skip_serializing_if = "weight_is_default")]
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Continuous,
}

/// How a continuous attribute is discretized into cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BinningSpec {
    Quantile { n_bins: usize },
    FixedEdges { edges: Vec<f64> },
}

impl BinningSpec {
    fn validate(&self) -> Result<()> {
        match self {
            BinningSpec::Quantile { n_bins } => {
                if *n_bins < 2 {
                    return Err(Error::Validation(format!(
                        "quantile binning needs at least 2 bins, got {n_bins}"
                    )));
                }
            }
            BinningSpec::FixedEdges { edges } => {
                if edges.len() < 2 {
                    return Err(Error::Validation(
                        "fixed-edges binning needs at least 2 edges".into(),
                    ));
                }
                if edges.iter().any(|e| !e.is_finite()) {
                    return Err(Error::Validation("bin edges must be finite".into()));
                }
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(
                        "bin edges must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Declared type (and, for continuous attributes, binning) of an attribute.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binning: Option<BinningSpec>,
}

/// A collection of prediction records with consistent typing.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub outcome_kind: OutcomeKind,
    pub attribute_specs: Vec<AttributeSpec>,
}

impl Dataset {
    /// Build a dataset, checking id uniqueness, weight validity, and type
    /// consistency across records. Attribute specs are inferred from the
    /// observed values; binning for continuous attributes is attached later
    /// from the audit config.
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut outcome_kind: Option<OutcomeKind> = None;
        let mut attr_kinds: BTreeMap<String, AttributeKind> = BTreeMap::new();

        for rec in &records {
            if !ids.insert(rec.id.clone()) {
                return Err(Error::Validation(format!("duplicate record id '{}'", rec.id)));
            }
            if !(rec.weight.is_finite() && rec.weight >= 0.0) {
                return Err(Error::Validation(format!(
                    "record '{}' has invalid weight {}",
                    rec.id, rec.weight
                )));
            }
            if rec.y_true.kind() != rec.y_pred.kind() {
                return Err(Error::Validation(format!(
                    "record '{}' mixes categorical and continuous outcomes",
                    rec.id
                )));
            }
            if let Some(v) = rec.y_true.as_value() {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "record '{}' has non-finite y_true",
                        rec.id
                    )));
                }
            }
            if let Some(v) = rec.y_pred.as_value() {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "record '{}' has non-finite y_pred",
                        rec.id
                    )));
                }
            }
            match outcome_kind {
                None => outcome_kind = Some(rec.y_true.kind()),
                Some(k) => {
                    if k != rec.y_true.kind() {
                        return Err(Error::Validation(format!(
                            "record '{}' has outcome kind differing from earlier records",
                            rec.id
                        )));
                    }
                }
            }
            for (name, value) in &rec.attrs {
                if let AttributeValue::Continuous(v) = value {
                    if !v.is_finite() {
                        return Err(Error::Validation(format!(
                            "record '{}' has non-finite value for attribute '{}'",
                            rec.id, name
                        )));
                    }
                }
                match attr_kinds.get(name.as_str()) {
                    None => {
                        attr_kinds.insert(name.clone(), value.kind());
                    }
                    Some(k) => {
                        if *k != value.kind() {
                            return Err(Error::Validation(format!(
                                "attribute '{}' mixes categorical and continuous values",
                                name
                            )));
                        }
                    }
                }
            }
        }

        let attribute_specs = attr_kinds
            .into_iter()
            .map(|(name, kind)| AttributeSpec { name, kind, binning: None })
            .collect();

        Ok(Dataset {
            records,
            outcome_kind: outcome_kind.unwrap_or(OutcomeKind::Categorical),
            attribute_specs,
        })
    }

    pub fn attribute_spec(&self, name: &str) -> Option<&AttributeSpec> {
        self.attribute_specs.iter().find(|s| s.name == name)
    }

    /// Attach binning to a continuous attribute, replacing any previous spec.
    pub fn set_binning(&mut self, attribute: &str, binning: BinningSpec) -> Result<()> {
        binning.validate()?;
        let spec = self
            .attribute_specs
            .iter_mut()
            .find(|s| s.name == attribute)
            .ok_or_else(|| Error::AttributeNotFound(attribute.to_string()))?;
        if spec.kind == AttributeKind::Categorical {
            return Err(Error::Validation(format!(
                "attribute '{attribute}' is categorical and cannot be binned"
            )));
        }
        spec.binning = Some(binning);
        Ok(())
    }

    /// Records in the given split.
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &PredictionRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Distinct outcome labels over y_true and y_pred, sorted. Empty for
    /// continuous outcomes.
    pub fn outcome_support(&self) -> Vec<String> {
        let mut support = BTreeSet::new();
        for rec in &self.records {
            if let Some(l) = rec.y_true.as_label() {
                support.insert(l.to_string());
            }
            if let Some(l) = rec.y_pred.as_label() {
                support.insert(l.to_string());
            }
        }
        support.into_iter().collect()
    }

    /// Attribute spec with config-supplied binning applied on top of the
    /// inferred spec.
    pub fn resolved_attribute(&self, config: &AuditConfig, name: &str) -> Result<AttributeSpec> {
        let mut spec = self
            .attribute_spec(name)
            .cloned()
            .ok_or_else(|| Error::AttributeNotFound(name.to_string()))?;
        if let Some(binning) = config.binning.get(name) {
            if spec.kind == AttributeKind::Categorical {
                return Err(Error::Validation(format!(
                    "attribute '{name}' is categorical and cannot be binned"
                )));
            }
            binning.validate()?;
            spec.binning = Some(binning.clone());
        }
        if spec.kind == AttributeKind::Continuous && spec.binning.is_none() {
            return Err(Error::Validation(format!(
                "continuous attribute '{name}' needs a binning spec before distribution estimation"
            )));
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingAttribute,
    BinningRequired,
    SpecMismatch,
    SupportMismatch,
    InvalidParameter,
}

/// One problem surfaced by config validation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationFinding {
    pub kind: FindingKind,
    pub message: String,
}

impl ValidationFinding {
    fn new(kind: FindingKind, message: impl Into<String>) -> Self {
        ValidationFinding { kind, message: message.into() }
    }
}

/// Check an audit config against a dataset. Returns an empty list exactly
/// when every audited attribute exists with a compatible spec, the numeric
/// parameters are in range, and an explicit ideal covers the observed
/// outcome support.
pub fn validate_config(config: &AuditConfig, dataset: &Dataset) -> Vec<ValidationFinding> {
    let mut findings = Vec::new();

    if config.attributes.is_empty() {
        findings.push(ValidationFinding::new(
            FindingKind::InvalidParameter,
            "no attributes selected for audit",
        ));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        findings.push(ValidationFinding::new(
            FindingKind::InvalidParameter,
            format!("alpha must lie in (0,1), got {}", config.alpha),
        ));
    }
    if !(config.effect_floor >= 0.0 && config.effect_floor.is_finite()) {
        findings.push(ValidationFinding::new(
            FindingKind::InvalidParameter,
            format!("effect_floor must be a finite non-negative value, got {}", config.effect_floor),
        ));
    }
    if config.n_permutations < 100 {
        findings.push(ValidationFinding::new(
            FindingKind::InvalidParameter,
            format!("n_permutations must be at least 100, got {}", config.n_permutations),
        ));
    }
    if !(config.smoothing_alpha >= 0.0 && config.smoothing_alpha.is_finite()) {
        findings.push(ValidationFinding::new(
            FindingKind::InvalidParameter,
            format!("smoothing_alpha must be a finite non-negative value, got {}", config.smoothing_alpha),
        ));
    }

    for name in &config.attributes {
        let Some(spec) = dataset.attribute_spec(name) else {
            findings.push(ValidationFinding::new(
                FindingKind::MissingAttribute,
                format!("audited attribute '{name}' does not appear in the dataset"),
            ));
            continue;
        };
        let config_binning = config.binning.get(name);
        match spec.kind {
            AttributeKind::Categorical => {
                if config_binning.is_some() {
                    findings.push(ValidationFinding::new(
                        FindingKind::SpecMismatch,
                        format!("attribute '{name}' is categorical but the config assigns binning"),
                    ));
                }
            }
            AttributeKind::Continuous => {
                match config_binning.or(spec.binning.as_ref()) {
                    None => findings.push(ValidationFinding::new(
                        FindingKind::BinningRequired,
                        format!("continuous attribute '{name}' has no binning spec"),
                    )),
                    Some(b) => {
                        if let Err(e) = b.validate() {
                            findings.push(ValidationFinding::new(
                                FindingKind::SpecMismatch,
                                format!("binning for '{name}' is invalid: {e}"),
                            ));
                        }
                    }
                }
            }
        }
    }

    if let IdealSpec::Explicit { table } = &config.ideal {
        let observed = dataset.outcome_support();
        let mut covered: BTreeSet<&str> = BTreeSet::new();
        for outcomes in table.values() {
            let sum: f64 = outcomes.values().sum();
            if (sum - 1.0).abs() > 1e-6 {
                findings.push(ValidationFinding::new(
                    FindingKind::InvalidParameter,
                    format!("explicit ideal table sums to {sum}, expected 1"),
                ));
            }
            if outcomes.values().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
                findings.push(ValidationFinding::new(
                    FindingKind::InvalidParameter,
                    "explicit ideal table has probabilities outside [0,1]".to_string(),
                ));
            }
            covered.extend(outcomes.keys().map(String::as_str));
        }
        let missing: Vec<&str> = observed
            .iter()
            .map(String::as_str)
            .filter(|o| !covered.contains(o))
            .collect();
        if !missing.is_empty() && dataset.outcome_kind == OutcomeKind::Categorical {
            findings.push(ValidationFinding::new(
                FindingKind::SupportMismatch,
                format!(
                    "explicit ideal is missing observed outcome label(s): {}",
                    missing.join(", ")
                ),
            ));
        }
    }
    if let IdealSpec::TowardUniform { lambda } = &config.ideal {
        if !(*lambda >= 0.0 && *lambda <= 1.0) {
            findings.push(ValidationFinding::new(
                FindingKind::InvalidParameter,
                format!("toward_uniform lambda must lie in [0,1], got {lambda}"),
            ));
        }
    }

    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(id: &str, yt: &str, yp: &str, attr: &str, split: Split) -> PredictionRecord {
        PredictionRecord {
            id: id.to_string(),
            y_true: OutcomeValue::Label(yt.to_string()),
            y_pred: OutcomeValue::Label(yp.to_string()),
            attrs: BTreeMap::from([(
                "g".to_string(),
                AttributeValue::Categorical(attr.to_string()),
            )]),
            split,
            text: None,
            weight: 1.0,
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let records = vec![rec("r1", "a", "a", "x", Split::Source), rec("r1", "b", "b", "y", Split::Source)];
        let err = Dataset::new(records).unwrap_err();
        assert!(err.to_string().contains("duplicate record id 'r1'"));
    }

    #[test]
    fn mixed_outcome_kinds_rejected() {
        let mut r2 = rec("r2", "a", "a", "x", Split::Source);
        r2.y_true = OutcomeValue::Value(1.5);
        r2.y_pred = OutcomeValue::Value(1.0);
        let err = Dataset::new(vec![rec("r1", "a", "a", "x", Split::Source), r2]).unwrap_err();
        assert!(err.to_string().contains("outcome kind"));
    }

    #[test]
    fn negative_weight_rejected() {
        let mut r = rec("r1", "a", "a", "x", Split::Source);
        r.weight = -0.5;
        assert!(Dataset::new(vec![r]).is_err());
    }

    #[test]
    fn attribute_specs_inferred() {
        let mut r = rec("r1", "a", "a", "x", Split::Source);
        r.attrs.insert("age".into(), AttributeValue::Continuous(31.0));
        let ds = Dataset::new(vec![r]).unwrap();
        assert_eq!(ds.attribute_specs.len(), 2);
        assert_eq!(ds.attribute_spec("age").unwrap().kind, AttributeKind::Continuous);
        assert_eq!(ds.attribute_spec("g").unwrap().kind, AttributeKind::Categorical);
    }

    #[test]
    fn empty_dataset_is_fine() {
        let ds = Dataset::new(vec![]).unwrap();
        assert_eq!(ds.records.len(), 0);
        assert!(ds.outcome_support().is_empty());
    }

    #[test]
    fn validate_flags_missing_attribute_and_support_gap() {
        let ds = Dataset::new(vec![rec("r1", "pos", "neg", "x", Split::Source)]).unwrap();
        let mut config = AuditConfig::for_attributes(vec!["g".into(), "ghost".into()]);
        config.ideal = IdealSpec::Explicit {
            table: BTreeMap::from([(
                "*".to_string(),
                BTreeMap::from([("pos".to_string(), 1.0)]),
            )]),
        };
        let findings = validate_config(&config, &ds);
        assert!(findings.iter().any(|f| f.kind == FindingKind::MissingAttribute));
        let support = findings
            .iter()
            .find(|f| f.kind == FindingKind::SupportMismatch)
            .expect("support finding");
        assert!(support.message.contains("neg"));
        assert_eq!(
            findings.iter().filter(|f| f.kind == FindingKind::SupportMismatch).count(),
            1
        );
    }

    #[test]
    fn validate_clean_config_is_empty() {
        let ds = Dataset::new(vec![
            rec("r1", "pos", "neg", "x", Split::Source),
            rec("r2", "neg", "neg", "y", Split::Source),
        ])
        .unwrap();
        let config = AuditConfig::for_attributes(vec!["g".into()]);
        assert!(validate_config(&config, &ds).is_empty());
    }

    #[test]
    fn continuous_attribute_requires_binning() {
        let mut r = rec("r1", "a", "a", "x", Split::Source);
        r.attrs.insert("age".into(), AttributeValue::Continuous(31.0));
        let ds = Dataset::new(vec![r]).unwrap();
        let config = AuditConfig::for_attributes(vec!["age".into()]);
        let findings = validate_config(&config, &ds);
        assert!(findings.iter().any(|f| f.kind == FindingKind::BinningRequired));
        assert!(ds.resolved_attribute(&config, "age").is_err());
    }
}
