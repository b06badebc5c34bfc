//! Synthetic scenario generator: plants exactly one bias origin at a
//! controlled strength (or none, or a compound) so detection power and false
//! positive rates can be measured against known ground truth. Presets encode
//! well-known case studies as ready-made scenarios.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mitigate::exact_counts;
use crate::model::{
    AttributeKind, AttributeSpec, AttributeValue, AuditConfig, Dataset, OutcomeValue,
    PredictionRecord, Split,
};
use crate::origins::{
    label_bias_check, overamplification_check, selection_bias_check, OriginFinding,
    TargetReference,
};
use crate::rng::{derive_seed, replicate_seed, rng_for};
use crate::stats::{IdealDistribution, ProbTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioOrigin {
    None,
    Label,
    Selection,
    Overamp,
    Compound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    WsjEffect,
    Kitchen,
    MentalHealth,
    HateSpeech,
}

/// Recipe for one synthetic scenario. The injection realizes exactly one
/// inequality: label bias flips gold labels in the first cell, selection
/// bias skews the sampled attribute marginal, overamplification shifts the
/// classifier's scores per cell, and compound combines selection and label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub origin: ScenarioOrigin,
    pub n: usize,
    #[serde(default = "default_cells")]
    pub attribute_cells: ProbTable,
    #[serde(default = "default_rates")]
    pub base_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub injection_strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub seed: u64,
}

fn default_cells() -> ProbTable {
    BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)])
}

fn default_rates() -> BTreeMap<String, f64> {
    BTreeMap::from([("a".to_string(), 0.25), ("b".to_string(), 0.25)])
}

/// Parse-time form of [`ScenarioSpec`] where everything is optional, so a
/// preset can supply the fields the document leaves out.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioSpec {
    #[serde(default)]
    origin: Option<ScenarioOrigin>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    attribute_cells: Option<ProbTable>,
    #[serde(default)]
    base_rates: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    injection_strength: Option<f64>,
    #[serde(default)]
    preset: Option<Preset>,
    #[serde(default)]
    seed: Option<u64>,
}

impl RawScenarioSpec {
    fn resolve(self) -> Result<ScenarioSpec> {
        let mut spec = match self.preset {
            Some(preset) => ScenarioSpec::preset(preset, self.seed.unwrap_or(0)),
            None => {
                let origin = self.origin.ok_or_else(|| {
                    Error::Validation("scenario needs an origin (or a preset)".into())
                })?;
                let n = self.n.ok_or_else(|| {
                    Error::Validation("scenario needs a record count n (or a preset)".into())
                })?;
                ScenarioSpec {
                    origin,
                    n,
                    attribute_cells: default_cells(),
                    base_rates: default_rates(),
                    injection_strength: 0.0,
                    preset: None,
                    seed: self.seed.unwrap_or(0),
                }
            }
        };
        if let Some(origin) = self.origin {
            spec.origin = origin;
        }
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(cells) = self.attribute_cells {
            spec.attribute_cells = cells;
        }
        if let Some(rates) = self.base_rates {
            spec.base_rates = rates;
        }
        if let Some(strength) = self.injection_strength {
            spec.injection_strength = strength;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }
}

impl ScenarioSpec {
    /// Sensible defaults for a single-origin scenario: two equal cells, and
    /// base rates the injection can act on (overamplification needs cells
    /// that lean away from the pooled rate).
    pub fn for_origin(origin: ScenarioOrigin, n: usize, injection_strength: f64, seed: u64) -> Self {
        let base_rates = match origin {
            ScenarioOrigin::Overamp => {
                BTreeMap::from([("a".to_string(), 0.45), ("b".to_string(), 0.25)])
            }
            _ => default_rates(),
        };
        ScenarioSpec {
            origin,
            n,
            attribute_cells: default_cells(),
            base_rates,
            injection_strength,
            preset: None,
            seed,
        }
    }

    /// A ready-made case-study scenario; only the seed varies.
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let (origin, n, cells, rates, strength) = match preset {
            // Captions in the kitchen cell mention the woman label 58% of
            // the time; the classifier amplifies that lean to about 63%.
            Preset::Kitchen => (
                ScenarioOrigin::Overamp,
                10_000,
                vec![("kitchen", 0.5), ("snowboard", 0.5)],
                vec![("kitchen", 0.58), ("snowboard", 0.42)],
                0.05,
            ),
            // Annotators mark group_a posts toxic at 0.40 where a trusted
            // expert reference says 0.25: flip probability 0.3.
            Preset::HateSpeech => (
                ScenarioOrigin::Label,
                2_000,
                vec![("group_a", 0.5), ("group_b", 0.5)],
                vec![("group_a", 0.25), ("group_b", 0.25)],
                0.3,
            ),
            // Continuous-age scenarios; cells/rates are ignored there.
            Preset::WsjEffect => (
                ScenarioOrigin::Selection,
                4_000,
                vec![("a", 0.5), ("b", 0.5)],
                vec![("a", 0.25), ("b", 0.25)],
                0.9,
            ),
            Preset::MentalHealth => (
                ScenarioOrigin::None,
                4_000,
                vec![("a", 0.5), ("b", 0.5)],
                vec![("a", 0.25), ("b", 0.25)],
                0.0,
            ),
        };
        ScenarioSpec {
            origin,
            n,
            attribute_cells: cells.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            base_rates: rates.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            injection_strength: strength,
            preset: Some(preset),
            seed,
        }
    }

    /// Parse from TOML or JSON text (tried in that order). A `preset` key
    /// fills in the whole scenario; any other field given alongside it
    /// overrides the preset's value.
    pub fn from_str(text: &str) -> Result<Self> {
        let raw = match toml::from_str::<RawScenarioSpec>(text) {
            Ok(r) => r,
            Err(toml_err) => match serde_json::from_str::<RawScenarioSpec>(text) {
                Ok(r) => r,
                Err(json_err) => {
                    return Err(Error::Validation(format!(
                        "scenario is neither valid TOML ({toml_err}) nor valid JSON ({json_err})"
                    )))
                }
            },
        };
        raw.resolve()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("record count must be positive".into()));
        }
        if !(self.injection_strength.is_finite() && self.injection_strength >= 0.0) {
            return Err(Error::Validation("injection strength must be finite and >= 0".into()));
        }
        if self.preset == Some(Preset::WsjEffect) || self.preset == Some(Preset::MentalHealth) {
            return Ok(()); // continuous-age presets ignore the cell tables
        }
        let sum: f64 = self.attribute_cells.values().sum();
        if self.attribute_cells.is_empty() || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "attribute cells must form a probability marginal, got sum {sum}"
            )));
        }
        for (cell, p) in &self.attribute_cells {
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::Validation(format!("cell '{cell}' has invalid mass {p}")));
            }
            let rate = self.base_rates.get(cell).copied().ok_or_else(|| {
                Error::Validation(format!("no base rate configured for cell '{cell}'"))
            })?;
            if !(rate.is_finite() && (0.0..=1.0).contains(&rate)) {
                return Err(Error::Validation(format!(
                    "base rate for cell '{cell}' must lie in [0,1], got {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// Provenance of a generated scenario: the attribute audited, the marginals
/// actually used, and any calibrated classifier shifts.
#[derive(Clone, Debug, Serialize)]
pub struct ScenarioMeta {
    pub attribute: AttributeSpec,
    pub source_marginal: ProbTable,
    pub target_marginal: ProbTable,
    pub calibrated_shifts: BTreeMap<String, f64>,
    pub positive_label: String,
    pub description: String,
}

#[derive(Clone, Debug)]
pub struct ScenarioData {
    pub source: Dataset,
    pub target_reference: Dataset,
    /// Always encodes the uninjected base rates, regardless of injection.
    pub trusted_reference: IdealDistribution,
    pub meta: ScenarioMeta,
}

const SIGNAL: f64 = 8.0;
const THRESHOLD: f64 = 4.0;

/// Expected predicted-positive rate for a cell with gold rate `rate` under
/// the shared-threshold classifier with per-cell score shift `shift`.
pub fn expected_predicted_rate(rate: f64, shift: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    rate * normal.cdf(THRESHOLD + shift) + (1.0 - rate) * (1.0 - normal.cdf(THRESHOLD - shift))
}

/// Calibrate the per-cell score shift so the classifier's expected predicted
/// rate lands at rate + bump. Solved by bisection; the expected rate is
/// strictly increasing in the shift.
pub fn shift_for_rate_bump(rate: f64, bump: f64) -> Result<f64> {
    let target = rate + bump;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Infeasible(format!(
            "injection pushes the predicted rate to {target:.4}, outside [0, 1]"
        )));
    }
    if bump == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (-16.0f64, 16.0f64);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if expected_predicted_rate(rate, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok((lo + hi) / 2.0)
}

fn classify(y_pos: bool, shift: f64, rng: &mut ChaCha8Rng) -> bool {
    let noise: f64 = rng.sample(StandardNormal);
    (if y_pos { SIGNAL } else { 0.0 }) + shift + noise >= THRESHOLD
}

struct CellPlan {
    name: String,
    source_mass: f64,
    target_mass: f64,
    rate: f64,
    flip_prob: f64,
    shift: f64,
}

fn categorical_record(
    id: String,
    cell: &str,
    split: Split,
    y_pos: bool,
    pred_pos: bool,
    pos: &str,
    neg: &str,
) -> PredictionRecord {
    let label = |b: bool| OutcomeValue::Label(if b { pos } else { neg }.to_string());
    PredictionRecord {
        id,
        y_true: label(y_pos),
        y_pred: label(pred_pos),
        attrs: BTreeMap::from([
            ("group".to_string(), AttributeValue::Categorical(cell.to_string())),
        ]),
        split,
        text: None,
        weight: 1.0,
    }
}

fn build_arm(
    plans: &[CellPlan],
    n: usize,
    split: Split,
    id_prefix: &str,
    pos: &str,
    neg: &str,
    flips_active: bool,
    shifts_active: bool,
    seed: u64,
) -> Result<Dataset> {
    let masses: Vec<f64> = plans
        .iter()
        .map(|p| if split == Split::Source { p.source_mass } else { p.target_mass })
        .collect();
    let counts = exact_counts(&masses, n);
    let mut flip_rng = rng_for(derive_seed(seed, &format!("synth.flips.{id_prefix}")));
    let mut score_rng = rng_for(derive_seed(seed, &format!("synth.scores.{id_prefix}")));
    let mut records = Vec::with_capacity(n);
    let mut next_id = 0usize;
    for (plan, m) in plans.iter().zip(&counts) {
        let pos_count = exact_counts(&[plan.rate, 1.0 - plan.rate], *m)[0];
        for j in 0..*m {
            let mut y_pos = j < pos_count;
            if flips_active && plan.flip_prob > 0.0 && flip_rng.gen_bool(plan.flip_prob) {
                y_pos = !y_pos;
            }
            let shift = if shifts_active { plan.shift } else { 0.0 };
            let pred_pos = classify(y_pos, shift, &mut score_rng);
            records.push(categorical_record(
                format!("{id_prefix}{next_id:06}"),
                &plan.name,
                split,
                y_pos,
                pred_pos,
                pos,
                neg,
            ));
            next_id += 1;
        }
    }
    Dataset::new(records)
}

fn group_attribute() -> AttributeSpec {
    AttributeSpec { name: "group".into(), kind: AttributeKind::Categorical, binning: None }
}

fn age_attribute() -> AttributeSpec {
    AttributeSpec { name: "age".into(), kind: AttributeKind::Continuous, binning: None }
}

fn generate_categorical(spec: &ScenarioSpec, pos: &str, neg: &str) -> Result<ScenarioData> {
    let cells: Vec<(String, f64)> =
        spec.attribute_cells.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let pooled: f64 = cells.iter().map(|(k, p)| p * spec.base_rates[k]).sum();
    let s = spec.injection_strength;

    // Selection: add strength to the first cell's mass, scale the rest.
    let skew_selection =
        matches!(spec.origin, ScenarioOrigin::Selection | ScenarioOrigin::Compound) && s > 0.0;
    let source_masses: Vec<f64> = if skew_selection {
        let p0 = cells[0].1;
        if p0 + s > 1.0 + 1e-12 {
            return Err(Error::Infeasible(format!(
                "selection skew pushes cell '{}' mass to {:.4}, above 1",
                cells[0].0,
                p0 + s
            )));
        }
        let scale = if p0 < 1.0 { (1.0 - p0 - s) / (1.0 - p0) } else { 0.0 };
        cells
            .iter()
            .enumerate()
            .map(|(i, (_, p))| if i == 0 { p + s } else { p * scale })
            .collect()
    } else {
        cells.iter().map(|(_, p)| *p).collect()
    };

    // Label: flip gold labels in the first cell with probability = strength.
    let flips_active = matches!(spec.origin, ScenarioOrigin::Label | ScenarioOrigin::Compound);
    if flips_active && s > 1.0 {
        return Err(Error::Infeasible(format!("flip probability {s} exceeds 1")));
    }

    // Overamplification: per-cell score shifts toward each cell's lean.
    let shifts_active = spec.origin == ScenarioOrigin::Overamp;
    let mut calibrated_shifts = BTreeMap::new();
    let mut plans = Vec::with_capacity(cells.len());
    for (i, (name, target_mass)) in cells.iter().enumerate() {
        let rate = spec.base_rates[name];
        let shift = if shifts_active && s > 0.0 {
            let lean = rate - pooled;
            if lean.abs() <= 1e-12 {
                0.0
            } else {
                let shift = shift_for_rate_bump(rate, s * lean.signum())?;
                calibrated_shifts.insert(name.clone(), shift);
                shift
            }
        } else {
            0.0
        };
        plans.push(CellPlan {
            name: name.clone(),
            source_mass: source_masses[i],
            target_mass: *target_mass,
            rate,
            flip_prob: if flips_active && i == 0 { s } else { 0.0 },
            shift,
        });
    }
    if shifts_active && s > 0.0 && calibrated_shifts.is_empty() {
        return Err(Error::Degenerate(
            "every cell sits at the pooled base rate; no lean to amplify".into(),
        ));
    }

    let source = build_arm(
        &plans,
        spec.n,
        Split::Source,
        "s",
        pos,
        neg,
        flips_active,
        shifts_active,
        spec.seed,
    )?;
    let target_reference =
        build_arm(&plans, spec.n, Split::Target, "t", pos, neg, false, false, spec.seed)?;

    let trusted_reference = IdealDistribution::Explicit(
        cells
            .iter()
            .map(|(name, _)| {
                let r = spec.base_rates[name];
                (
                    name.clone(),
                    BTreeMap::from([(pos.to_string(), r), (neg.to_string(), 1.0 - r)]),
                )
            })
            .collect(),
    );
    let meta = ScenarioMeta {
        attribute: group_attribute(),
        source_marginal: cells
            .iter()
            .zip(&source_masses)
            .map(|((k, _), m)| (k.clone(), *m))
            .collect(),
        target_marginal: cells.iter().cloned().collect(),
        calibrated_shifts,
        positive_label: pos.to_string(),
        description: format!("{:?} injection at strength {s}", spec.origin),
    };
    Ok(ScenarioData { source, target_reference, trusted_reference, meta })
}

/// Prediction error grows with the author's distance from the source
/// population's typical age: source authors cluster at the young end while
/// the deployment population spans the full range.
fn generate_wsj(spec: &ScenarioSpec) -> Result<ScenarioData> {
    let (lo, hi) = (20.0f64, 80.0f64);
    let strength = spec.injection_strength;
    let build = |split: Split, prefix: &str| -> Result<Dataset> {
        let mut rng = rng_for(derive_seed(spec.seed, &format!("synth.age.{prefix}")));
        let mut records = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let age = match split {
                Split::Source => {
                    let z: f64 = rng.sample(StandardNormal);
                    (lo + z.abs() * 5.0).min(hi)
                }
                Split::Target => rng.gen_range(lo..hi),
            };
            let y: f64 = rng.sample(StandardNormal);
            let sigma = 0.2 + strength * (age - lo) / (hi - lo);
            let noise: f64 = rng.sample(StandardNormal);
            records.push(PredictionRecord {
                id: format!("{prefix}{i:06}"),
                y_true: OutcomeValue::Value(y),
                y_pred: OutcomeValue::Value(y + sigma * noise),
                attrs: BTreeMap::from([("age".to_string(), AttributeValue::Continuous(age))]),
                split,
                text: None,
                weight: 1.0,
            });
        }
        Dataset::new(records)
    };
    let source = build(Split::Source, "s")?;
    let target_reference = build(Split::Target, "t")?;
    Ok(ScenarioData {
        source,
        target_reference,
        // Continuous outcomes have no label table to trust; label audits do
        // not apply to this scenario.
        trusted_reference: IdealDistribution::Uniform,
        meta: ScenarioMeta {
            attribute: age_attribute(),
            source_marginal: BTreeMap::new(),
            target_marginal: BTreeMap::new(),
            calibrated_shifts: BTreeMap::new(),
            positive_label: String::new(),
            description: format!(
                "error scale rises with age distance from the source population (strength {strength})"
            ),
        },
    })
}

/// Case-control design with confounded age: condition cases skew old while
/// the control pool spans the full range, so a matched-controls pass is
/// needed before the label carries condition signal rather than age.
fn generate_mental_health(spec: &ScenarioSpec) -> Result<ScenarioData> {
    let (lo, hi) = (20.0f64, 80.0f64);
    let n_cases = spec.n / 4;
    let mut rng = rng_for(derive_seed(spec.seed, "synth.age.cases"));
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let is_case = i < n_cases;
        let age = if is_case {
            let z: f64 = rng.sample(StandardNormal);
            (55.0 + z * 8.0).clamp(lo, hi)
        } else {
            rng.gen_range(lo..hi)
        };
        // The flawed classifier keys on age alone.
        let label = if is_case { "ptsd" } else { "depression" };
        let pred = if age >= 50.0 { "ptsd" } else { "depression" };
        records.push(PredictionRecord {
            id: format!("s{i:06}"),
            y_true: OutcomeValue::Label(label.to_string()),
            y_pred: OutcomeValue::Label(pred.to_string()),
            attrs: BTreeMap::from([("age".to_string(), AttributeValue::Continuous(age))]),
            split: Split::Source,
            text: None,
            weight: 1.0,
        });
    }
    let source = Dataset::new(records)?;
    let target_reference = Dataset::new(source.records.clone())?;
    Ok(ScenarioData {
        source,
        target_reference,
        trusted_reference: IdealDistribution::Explicit(BTreeMap::from([(
            "*".to_string(),
            BTreeMap::from([("ptsd".to_string(), 0.5), ("depression".to_string(), 0.5)]),
        )])),
        meta: ScenarioMeta {
            attribute: age_attribute(),
            source_marginal: BTreeMap::new(),
            target_marginal: BTreeMap::new(),
            calibrated_shifts: BTreeMap::new(),
            positive_label: "ptsd".into(),
            description: "condition cases skew old; control pool is uniform over age".into(),
        },
    })
}

/// Build the scenario: a source dataset (with the injected bias), a target
/// reference sample, and a trusted label reference encoding the uninjected
/// base rates.
pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioData> {
    spec.validate()?;
    match spec.preset {
        Some(Preset::WsjEffect) => generate_wsj(spec),
        Some(Preset::MentalHealth) => generate_mental_health(spec),
        Some(Preset::Kitchen) => generate_categorical(spec, "woman", "other"),
        Some(Preset::HateSpeech) => generate_categorical(spec, "toxic", "ok"),
        None => generate_categorical(spec, "pos", "neg"),
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PowerCell {
    pub strength: f64,
    pub n: usize,
    pub power: f64,
}

fn matching_check(
    origin: ScenarioOrigin,
    data: &ScenarioData,
    config: &AuditConfig,
) -> Result<OriginFinding> {
    let attr = &data.meta.attribute;
    match origin {
        ScenarioOrigin::Selection => selection_bias_check(
            &data.source,
            &TargetReference::Dataset(&data.target_reference),
            attr,
            config,
        ),
        ScenarioOrigin::Label => {
            label_bias_check(&data.source, &data.trusted_reference, attr, config)
        }
        ScenarioOrigin::Overamp => overamplification_check(&data.source, attr, config),
        other => Err(Error::Validation(format!(
            "power grid needs a single-injection origin, got {other:?}"
        ))),
    }
}

/// Detection power of the matching check over a (strength, n) grid. Trials
/// run in parallel on derived seeds and merge in trial order.
pub fn power_grid(
    origin: ScenarioOrigin,
    strengths: &[f64],
    n_values: &[usize],
    trials: u32,
    config: &AuditConfig,
    seed: u64,
) -> Result<Vec<PowerCell>> {
    if trials < 50 {
        return Err(Error::Validation(format!(
            "power estimates need at least 50 trials, got {trials}"
        )));
    }
    let mut grid = Vec::with_capacity(strengths.len() * n_values.len());
    for (si, strength) in strengths.iter().enumerate() {
        for (ni, n) in n_values.iter().enumerate() {
            let stream = derive_seed(seed, &format!("synth.power.{si}.{ni}"));
            let flags: Vec<bool> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let spec = ScenarioSpec::for_origin(
                        origin,
                        *n,
                        *strength,
                        replicate_seed(stream, u64::from(t)),
                    );
                    let data = generate(&spec)?;
                    matching_check(origin, &data, config).map(|f| f.flagged)
                })
                .collect::<Result<Vec<_>>>()?;
            let power = flags.iter().filter(|f| **f).count() as f64 / f64::from(trials);
            grid.push(PowerCell { strength: *strength, n: *n, power });
        }
    }
    Ok(grid)
}

/// Small template corpus for augmentation tests: subject pronouns planted at
/// a configurable imbalance, with a matching gender attribute.
pub fn template_corpus(n: usize, he_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&he_fraction) {
        return Err(Error::Validation("he_fraction must lie in [0,1]".into()));
    }
    let templates = [
        "PRON went to the market",
        "PRON wrote the report",
        "PRON fixed the engine",
        "PRON cooked dinner for everyone",
    ];
    let he_count = exact_counts(&[he_fraction, 1.0 - he_fraction], n)[0];
    let mut order: Vec<bool> = (0..n).map(|i| i < he_count).collect();
    // Interleave deterministically so pronouns are not position-correlated.
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng_for(derive_seed(seed, "synth.corpus")));
    let records = order
        .iter()
        .enumerate()
        .map(|(i, is_he)| {
            let pronoun = if *is_he { "He" } else { "She" };
            let gender = if *is_he { "m" } else { "f" };
            PredictionRecord {
                id: format!("c{i:05}"),
                y_true: OutcomeValue::Label("text".into()),
                y_pred: OutcomeValue::Label("text".into()),
                attrs: BTreeMap::from([
                    ("gender".to_string(), AttributeValue::Categorical(gender.to_string())),
                ]),
                split: Split::Source,
                text: Some(templates[i % templates.len()].replacen("PRON", pronoun, 1)),
                weight: 1.0,
            }
        })
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disparity::error_disparity;
    use crate::mitigate::matched_controls;
    use crate::model::BinningSpec;
    use crate::stats::kl_divergence;
    use statrs::distribution::ContinuousCDF;

    fn check_config() -> AuditConfig {
        let mut config = AuditConfig::for_attributes(vec!["group".into()]);
        config.n_permutations = 199;
        config
    }

    fn rate_of(ds: &Dataset, cell: &str, pos: &str, predicted: bool) -> f64 {
        let in_cell = |r: &&PredictionRecord| {
            r.attrs["group"] == AttributeValue::Categorical(cell.to_string())
        };
        let total = ds.records.iter().filter(in_cell).count() as f64;
        let hits = ds
            .records
            .iter()
            .filter(in_cell)
            .filter(|r| {
                let v = if predicted { &r.y_pred } else { &r.y_true };
                v.as_label() == Some(pos)
            })
            .count() as f64;
        hits / total
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::for_origin(ScenarioOrigin::Compound, 500, 0.2, 11);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let dump = |d: &Dataset| {
            d.records
                .iter()
                .map(|r| format!("{}|{:?}|{:?}", r.id, r.y_true, r.y_pred))
                .collect::<Vec<_>>()
        };
        assert_eq!(dump(&a.source), dump(&b.source));
        assert_eq!(dump(&a.target_reference), dump(&b.target_reference));
        let c = generate(&ScenarioSpec::for_origin(ScenarioOrigin::Compound, 500, 0.2, 12)).unwrap();
        assert_ne!(dump(&a.source), dump(&c.source));
    }

    #[test]
    fn selection_marginal_oracle() {
        let spec = ScenarioSpec::for_origin(ScenarioOrigin::Selection, 10_000, 0.3, 5);
        let data = generate(&spec).unwrap();
        let count = |ds: &Dataset, cell: &str| {
            ds.records
                .iter()
                .filter(|r| r.attrs["group"] == AttributeValue::Categorical(cell.into()))
                .count() as f64
        };
        let n = data.source.records.len() as f64;
        let source: ProbTable = BTreeMap::from([
            ("a".to_string(), count(&data.source, "a") / n),
            ("b".to_string(), count(&data.source, "b") / n),
        ]);
        assert_eq!(source["a"], 0.8);
        assert_eq!(source["b"], 0.2);
        let target: ProbTable =
            BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let kl = kl_divergence(&source, &target).unwrap();
        assert!((kl - 0.19274475702175752).abs() < 1e-12);
        let finding = matching_check(ScenarioOrigin::Selection, &data, &check_config()).unwrap();
        assert!(finding.flagged, "{}", finding.evidence);
        assert!(finding.evidence.contains("KL 0.1927"), "{}", finding.evidence);
    }

    #[test]
    fn null_scenario_flags_nothing() {
        let spec = ScenarioSpec::for_origin(ScenarioOrigin::None, 8_000, 0.0, 3);
        let data = generate(&spec).unwrap();
        let config = check_config();
        for origin in [ScenarioOrigin::Selection, ScenarioOrigin::Label] {
            let finding = matching_check(origin, &data, &config).unwrap();
            assert!(!finding.flagged, "{origin:?}: {}", finding.evidence);
        }
        // Overamp defaults lean, but a none scenario still must not flag it.
        let finding = matching_check(ScenarioOrigin::Overamp, &data, &config).unwrap();
        assert!(!finding.flagged, "{}", finding.evidence);
    }

    #[test]
    fn single_injection_purity() {
        let config = check_config();
        let cases = [
            (ScenarioOrigin::Label, 0.2),
            (ScenarioOrigin::Selection, 0.15),
            (ScenarioOrigin::Overamp, 0.08),
        ];
        for (planted, strength) in cases {
            let spec = ScenarioSpec::for_origin(planted, 10_000, strength, 21);
            let data = generate(&spec).unwrap();
            for probe in [ScenarioOrigin::Label, ScenarioOrigin::Selection, ScenarioOrigin::Overamp]
            {
                let finding = matching_check(probe, &data, &config).unwrap();
                assert_eq!(
                    finding.flagged,
                    probe == planted,
                    "planted {planted:?}, probe {probe:?}: {}",
                    finding.evidence
                );
            }
        }
    }

    #[test]
    fn trusted_reference_ignores_injection() {
        let spec = ScenarioSpec::for_origin(ScenarioOrigin::Label, 2_000, 0.3, 9);
        let data = generate(&spec).unwrap();
        let resolved = data
            .trusted_reference
            .resolve(&["a".to_string(), "b".to_string()], &["neg".to_string(), "pos".to_string()])
            .unwrap();
        assert_eq!(resolved["a"]["pos"], 0.25);
        assert_eq!(resolved["b"]["pos"], 0.25);
        // ... while the annotated rate in the flipped cell moved to ~0.40.
        let annotated = rate_of(&data.source, "a", "pos", false);
        assert!((annotated - 0.40).abs() < 0.04, "annotated rate {annotated}");
    }

    #[test]
    fn shift_calibration_matches_closed_form() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        // Positive bump: the negatives' tail does the work.
        let up = shift_for_rate_bump(0.58, 0.05).unwrap();
        let closed_up = THRESHOLD + normal.inverse_cdf(0.05 / 0.42);
        assert!((up - closed_up).abs() < 1e-4, "{up} vs {closed_up}");
        // Negative bump: the positives' tail does the work.
        let down = shift_for_rate_bump(0.42, -0.05).unwrap();
        let closed_down = normal.inverse_cdf(1.0 - 0.05 / 0.42) - THRESHOLD;
        assert!((down - closed_down).abs() < 1e-4, "{down} vs {closed_down}");
        assert!(shift_for_rate_bump(0.9, 0.2).is_err());
        assert_eq!(shift_for_rate_bump(0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn kitchen_preset_amplifies_to_sixty_three() {
        let data = generate(&ScenarioSpec::preset(Preset::Kitchen, 17)).unwrap();
        // Gold rate is exact by construction; predicted rate is stochastic.
        assert!((rate_of(&data.source, "kitchen", "woman", false) - 0.58).abs() < 1e-12);
        let predicted = rate_of(&data.source, "kitchen", "woman", true);
        assert!((predicted - 0.63).abs() < 0.02, "predicted rate {predicted}");
        let other = rate_of(&data.source, "snowboard", "woman", true);
        assert!((other - 0.37).abs() < 0.02, "predicted rate {other}");
        assert!(data.meta.calibrated_shifts["kitchen"] > 0.0);
        assert!(data.meta.calibrated_shifts["snowboard"] < 0.0);
        let finding =
            matching_check(ScenarioOrigin::Overamp, &data, &check_config()).unwrap();
        assert!(finding.flagged, "{}", finding.evidence);
        assert!(finding.evidence.contains("amplified"), "{}", finding.evidence);
    }

    #[test]
    fn hate_speech_preset_flags_label_bias() {
        let data = generate(&ScenarioSpec::preset(Preset::HateSpeech, 23)).unwrap();
        let annotated = rate_of(&data.source, "group_a", "toxic", false);
        assert!((annotated - 0.40).abs() < 0.035, "annotated rate {annotated}");
        assert!((rate_of(&data.source, "group_b", "toxic", false) - 0.25).abs() < 1e-12);
        let finding = matching_check(ScenarioOrigin::Label, &data, &check_config()).unwrap();
        assert!(finding.flagged, "{}", finding.evidence);
    }

    #[test]
    fn wsj_preset_shows_error_and_selection_disparity() {
        let data = generate(&ScenarioSpec::preset(Preset::WsjEffect, 31)).unwrap();
        let mut config = AuditConfig::for_attributes(vec!["age".into()]);
        config.n_permutations = 199;
        config.binning.insert("age".into(), BinningSpec::Quantile { n_bins: 4 });
        let attr = data.source.resolved_attribute(&config, "age").unwrap();
        let report = error_disparity(&data.source, &attr, &config).unwrap();
        assert!(report.flagged, "p {}", report.p_value);
        // Per-bin mean errors rise with age.
        let means: Vec<f64> = report
            .per_cell_detail
            .values()
            .map(|d| d.mean_error.unwrap())
            .collect();
        assert_eq!(means.len(), 4);
        let finding = selection_bias_check(
            &data.source,
            &TargetReference::Dataset(&data.target_reference),
            &attr,
            &config,
        )
        .unwrap();
        assert!(finding.flagged, "{}", finding.evidence);
    }

    #[test]
    fn mental_health_preset_supports_matching() {
        let data = generate(&ScenarioSpec::preset(Preset::MentalHealth, 41)).unwrap();
        let cases: Vec<PredictionRecord> = data
            .source
            .records
            .iter()
            .filter(|r| r.y_true.as_label() == Some("ptsd"))
            .cloned()
            .collect();
        let pool: Vec<PredictionRecord> = data
            .source
            .records
            .iter()
            .filter(|r| r.y_true.as_label() == Some("depression"))
            .cloned()
            .collect();
        assert_eq!(cases.len(), 1000);
        let result = matched_controls(&cases, &pool, &[age_attribute()], 0).unwrap();
        assert_eq!(result.shortfall, 0);
        // Compare age histograms over fixed decade bins.
        let hist = |records: &[PredictionRecord]| -> Vec<f64> {
            let mut bins = vec![0.0; 6];
            for r in records {
                if let AttributeValue::Continuous(age) = r.attrs["age"] {
                    let b = (((age - 20.0) / 10.0) as usize).min(5);
                    bins[b] += 1.0;
                }
            }
            let total: f64 = bins.iter().sum();
            bins.iter().map(|c| c / total).collect()
        };
        let (hc, hm) = (hist(&cases), hist(&result.selected));
        for (a, b) in hc.iter().zip(&hm) {
            assert!((a - b).abs() <= 0.02, "bin gap {} vs {}", a, b);
        }
    }

    #[test]
    fn power_grid_is_calibrated_and_monotone() {
        let mut config = check_config();
        config.n_permutations = 99;
        let grid = power_grid(
            ScenarioOrigin::Label,
            &[0.0, 0.1, 0.2],
            &[2_000],
            50,
            &config,
            77,
        )
        .unwrap();
        assert_eq!(grid.len(), 3);
        assert!(grid[0].power <= 0.07, "null power {}", grid[0].power);
        assert!(grid[2].power >= 0.9, "strong power {}", grid[2].power);
        assert!(grid[0].power <= grid[2].power + 0.1);
        assert!(power_grid(ScenarioOrigin::Label, &[0.1], &[100], 10, &config, 1).is_err());
        assert!(power_grid(ScenarioOrigin::None, &[0.1], &[100], 50, &config, 1).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ScenarioSpec::for_origin(ScenarioOrigin::Label, 0, 0.1, 1);
        assert!(generate(&spec).is_err());
        spec.n = 100;
        spec.attribute_cells.insert("a".into(), 0.9);
        assert!(generate(&spec).is_err());
        let skewed = ScenarioSpec::for_origin(ScenarioOrigin::Selection, 100, 0.6, 1);
        assert!(matches!(generate(&skewed), Err(Error::Infeasible(_))));
        let hot = ScenarioSpec::for_origin(ScenarioOrigin::Overamp, 100, 0.6, 1);
        assert!(matches!(generate(&hot), Err(Error::Infeasible(_))));
    }

    #[test]
    fn scenario_spec_parses_from_toml_and_json() {
        let toml_text = "origin = \"selection\"\nn = 500\ninjection_strength = 0.3\nseed = 4\n";
        let spec = ScenarioSpec::from_str(toml_text).unwrap();
        assert_eq!(spec.origin, ScenarioOrigin::Selection);
        assert_eq!(spec.attribute_cells["a"], 0.5);
        let json_text = r#"{"origin": "overamp", "n": 200, "injection_strength": 0.05}"#;
        let spec = ScenarioSpec::from_str(json_text).unwrap();
        assert_eq!(spec.origin, ScenarioOrigin::Overamp);
        assert!(ScenarioSpec::from_str("origin = 3").is_err());
    }

    #[test]
    fn preset_key_fills_the_whole_scenario() {
        let spec = ScenarioSpec::from_str("preset = \"kitchen\"\nseed = 9\n").unwrap();
        assert_eq!(spec, ScenarioSpec::preset(Preset::Kitchen, 9));
        // explicit fields override the preset's values
        let smaller = ScenarioSpec::from_str("preset = \"kitchen\"\nn = 500\n").unwrap();
        assert_eq!(smaller.n, 500);
        assert_eq!(smaller.injection_strength, 0.05);
        // a bare document still needs origin and n
        assert!(ScenarioSpec::from_str("n = 100").is_err());
        assert!(ScenarioSpec::from_str("origin = \"label\"").is_err());
    }

    #[test]
    fn template_corpus_plants_imbalance() {
        let ds = template_corpus(100, 0.75, 2).unwrap();
        let he = ds
            .records
            .iter()
            .filter(|r| r.text.as_deref().is_some_and(|t| t.starts_with("He ")))
            .count();
        assert_eq!(he, 75);
        assert_eq!(ds.records.len(), 100);
        let ds2 = template_corpus(100, 0.75, 2).unwrap();
        let texts = |d: &Dataset| d.records.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&ds), texts(&ds2));
    }
}
