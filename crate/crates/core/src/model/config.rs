use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::WeatSpec;

use super::{AttributeKind, BinningSpec, OutcomeKind};

/// Config-level description of the ideal outcome distribution. Resolved into
/// per-cell probability tables by the audit pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IdealSpec {
    /// Per-cell tables supplied directly. The key `*` provides a default for
    /// cells not listed.
    Explicit { table: BTreeMap<String, BTreeMap<String, f64>> },
    /// Every outcome equally likely in every cell.
    #[default]
    Uniform,
    /// Estimated from a trusted reference dataset supplied at audit time.
    EmpiricalFrom,
    /// Interpolate between the training label distribution and uniform:
    /// lambda = 0 keeps the training distribution, lambda = 1 is uniform.
    TowardUniform { lambda: f64 },
}

/// Column assignments for CSV ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub id: String,
    pub y_true: String,
    pub y_pred: String,
    pub split: String,
    pub outcome_kind: OutcomeKind,
    #[serde(default)]
    pub weight: Option<String>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, CsvAttrColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvAttrColumn {
    pub column: String,
    pub kind: AttributeKind,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_effect_floor() -> f64 {
    0.01
}

fn default_n_permutations() -> u32 {
    1000
}

fn default_smoothing_alpha() -> f64 {
    0.5
}

/// Parameters controlling one audit run. Read from a TOML or JSON document;
/// every field except `attributes` has a default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    /// Attribute names to audit.
    pub attributes: Vec<String>,
    /// Ideal outcome distribution the predictions are held against.
    #[serde(default)]
    pub ideal: IdealSpec,
    /// Significance level for flagging.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Minimum per-observation divergence (nats) to flag.
    #[serde(default = "default_effect_floor")]
    pub effect_floor: f64,
    /// Resampling replicates per significance test (at least 100).
    #[serde(default = "default_n_permutations")]
    pub n_permutations: u32,
    /// Root seed; every stochastic operation derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    /// Additive smoothing pseudo-count per outcome.
    #[serde(default = "default_smoothing_alpha")]
    pub smoothing_alpha: f64,
    /// Binning per continuous attribute, overriding dataset specs.
    #[serde(default)]
    pub binning: BTreeMap<String, BinningSpec>,
    /// Column assignments, required when the data format is CSV.
    #[serde(default)]
    pub csv: Option<ColumnMap>,
    /// Embedding association probes to run when embeddings are supplied.
    #[serde(default)]
    pub weat: Vec<WeatSpec>,
}

impl AuditConfig {
    /// Config with defaults for everything but the audited attributes.
    pub fn for_attributes(attributes: Vec<String>) -> Self {
        AuditConfig {
            attributes,
            ideal: IdealSpec::default(),
            alpha: default_alpha(),
            effect_floor: default_effect_floor(),
            n_permutations: default_n_permutations(),
            seed: 0,
            smoothing_alpha: default_smoothing_alpha(),
            binning: BTreeMap::new(),
            csv: None,
            weat: Vec::new(),
        }
    }

    /// Bounds that make the audit meaningful, checked wherever a config
    /// enters from a document.
    fn check(self) -> Result<Self> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if self.n_permutations < 100 {
            return Err(Error::Validation(format!(
                "n_permutations must be at least 100 for usable p-value resolution, got {}",
                self.n_permutations
            )));
        }
        if !(self.smoothing_alpha.is_finite() && self.smoothing_alpha >= 0.0) {
            return Err(Error::Validation(format!(
                "smoothing_alpha must be a non-negative real, got {}",
                self.smoothing_alpha
            )));
        }
        Ok(self)
    }

    /// Parse from TOML or JSON text (tried in that order).
    pub fn from_str(text: &str) -> Result<Self> {
        let parsed = match toml::from_str::<AuditConfig>(text) {
            Ok(c) => c,
            Err(toml_err) => match serde_json::from_str::<AuditConfig>(text) {
                Ok(c) => c,
                Err(json_err) => {
                    return Err(Error::Validation(format!(
                        "config is neither valid TOML ({toml_err}) nor valid JSON ({json_err})"
                    )))
                }
            },
        };
        parsed.check()
    }

    /// Load from a file, choosing the parser by extension when recognized.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parsed: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?,
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?,
            _ => return Self::from_str(&text),
        };
        parsed.check()
    }
}
