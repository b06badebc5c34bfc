//! Release acceptance suite: seven numbered gates covering the divergence
//! oracles, the amplification case study, detection power, countermeasure
//! closure, the embedding probes, the interaction-matrix quadrants, and the
//! end-to-end command contract. Each gate is one test that prints a single
//! `criterion N ...: PASS` line (visible under --nocapture); a failed gate
//! panics with the criterion number in the message.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use biaslens_core::disparity::outcome_disparity;
use biaslens_core::mitigate::{
    apply_weights, counterfactual_augment, poststratify_weights, stratified_resample,
    threshold_match, ResampleMode, SwapLexicon,
};
use biaslens_core::model::{AttributeValue, AuditConfig, OutcomeValue};
use biaslens_core::origins::{
    diagnose, label_bias_check, overamplification_check, selection_bias_check, BiasOrigin,
    TargetReference,
};
use biaslens_core::rng::{derive_seed, replicate_seed, rng_for};
use biaslens_core::semantic::{
    hard_debias, masked_logprob_bias, weat, EmbeddingSet, ToyScorer, TwoSlotTemplate, WeatSpec,
};
use biaslens_core::stats::{
    attribute_marginal, kl_divergence, llr_statistic, AttributeResolver, ProbTable, SplitFilter,
};
use biaslens_core::synth::{
    expected_predicted_rate, generate, template_corpus, Preset, ScenarioData, ScenarioOrigin,
    ScenarioSpec,
};

const ROOT: u64 = 0xB1A5;

fn pass(n: u32, label: &str, started: Instant, budget: Option<Duration>) {
    let elapsed = started.elapsed();
    if let Some(budget) = budget {
        assert!(
            elapsed <= budget,
            "criterion {n} ({label}): budget {budget:?} exceeded, took {elapsed:?}"
        );
    }
    println!("criterion {n} ({label}): PASS in {elapsed:.2?}");
}

fn table(pairs: &[(&str, f64)]) -> ProbTable {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn check_config(seed: u64, n_permutations: u32) -> AuditConfig {
    let mut config = AuditConfig::for_attributes(vec!["group".into()]);
    config.n_permutations = n_permutations;
    config.seed = seed;
    config
}

// --- 1. divergence oracles ------------------------------------------------

#[test]
fn criterion_1_divergence_oracles() {
    let started = Instant::now();

    let q = table(&[("a", 0.9), ("b", 0.1)]);
    let uniform = table(&[("a", 0.5), ("b", 0.5)]);
    let kl = kl_divergence(&q, &uniform).unwrap();
    assert!((kl - 0.368064).abs() < 1e-6, "criterion 1: KL {kl}");

    let counts = BTreeMap::from([("a".to_string(), 90.0), ("b".to_string(), 10.0)]);
    let g = llr_statistic(&counts, &uniform).unwrap().statistic;
    assert!((g - 73.6129).abs() < 1e-4, "criterion 1: G {g}");

    // G = 2n * KL(empirical || ideal) over random count tables.
    let mut rng = rng_for(derive_seed(ROOT, "acceptance.divergence"));
    for trial in 0..1_000 {
        let k = rng.gen_range(2..=6usize);
        let counts: BTreeMap<String, f64> =
            (0..k).map(|i| (format!("c{i}"), f64::from(rng.gen_range(1..=200u32)))).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0f64)).collect();
        let z: f64 = raw.iter().sum();
        let ideal: ProbTable =
            raw.iter().enumerate().map(|(i, v)| (format!("c{i}"), v / z)).collect();
        let n: f64 = counts.values().sum();
        let empirical: ProbTable = counts.iter().map(|(c, v)| (c.clone(), v / n)).collect();
        let g = llr_statistic(&counts, &ideal).unwrap().statistic;
        let kl = kl_divergence(&empirical, &ideal).unwrap();
        let gap = (g - 2.0 * n * kl).abs();
        assert!(gap < 1e-9, "criterion 1: trial {trial} identity gap {gap}");
    }

    pass(1, "divergence oracles", started, Some(Duration::from_secs(1)));
}

// --- 2. kitchen amplification case study ----------------------------------

#[test]
fn criterion_2_kitchen_amplification() {
    let started = Instant::now();
    let spec = ScenarioSpec::preset(Preset::Kitchen, derive_seed(ROOT, "acceptance.kitchen"));
    let data = generate(&spec).unwrap();

    // Two arms of 5,000 records; the kitchen arm's training lean is 0.58.
    let kitchen = AttributeValue::Categorical("kitchen".into());
    let arm: Vec<_> =
        data.source.records.iter().filter(|r| r.attrs["group"] == kitchen).collect();
    assert_eq!(arm.len(), 5_000, "criterion 2: kitchen arm size");
    let woman = OutcomeValue::Label("woman".into());
    let training =
        arm.iter().filter(|r| r.y_true == woman).count() as f64 / arm.len() as f64;
    assert!((training - 0.58).abs() < 1e-9, "criterion 2: training rate {training}");

    // The calibrated classifier pushes the expected rate to 0.63; the
    // realized sample rate lands nearby.
    let shift = data.meta.calibrated_shifts["kitchen"];
    let calibrated = expected_predicted_rate(0.58, shift);
    assert!((calibrated - 0.63).abs() <= 0.005, "criterion 2: calibrated rate {calibrated}");
    let predicted =
        arm.iter().filter(|r| r.y_pred == woman).count() as f64 / arm.len() as f64;
    assert!((predicted - 0.63).abs() < 0.02, "criterion 2: sample predicted rate {predicted}");

    let config = check_config(derive_seed(ROOT, "acceptance.kitchen.audit"), 499);
    let finding = overamplification_check(&data.source, &data.meta.attribute, &config).unwrap();
    assert!(finding.flagged, "criterion 2: overamplification not flagged");
    assert!(finding.p_value < 0.01, "criterion 2: p {}", finding.p_value);
    assert!(
        finding.evidence.contains("amplified"),
        "criterion 2: evidence '{}'",
        finding.evidence
    );

    let report =
        outcome_disparity(&data.source, &data.meta.attribute, &data.trusted_reference, &config)
            .unwrap();
    assert!(report.flagged, "criterion 2: outcome disparity not flagged");

    pass(2, "kitchen amplification", started, Some(Duration::from_secs(10)));
}

// --- 3. injection power study ----------------------------------------------

/// Flag status of the three origin checks, in [selection, label, overamp]
/// order.
fn scenario_checks(data: &ScenarioData, config: &AuditConfig) -> [bool; 3] {
    let attr = &data.meta.attribute;
    let target = TargetReference::Dataset(&data.target_reference);
    let selection = selection_bias_check(&data.source, &target, attr, config).unwrap().flagged;
    let label =
        label_bias_check(&data.source, &data.trusted_reference, attr, config).unwrap().flagged;
    let overamp = overamplification_check(&data.source, attr, config).unwrap().flagged;
    [selection, label, overamp]
}

/// Fraction of trials flagged by each check on freshly generated scenarios.
fn flag_rates(origin: ScenarioOrigin, strength: f64, trials: u32, stream: &str) -> [f64; 3] {
    let stream = derive_seed(ROOT, stream);
    let counts = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = replicate_seed(stream, u64::from(t));
            let data = generate(&ScenarioSpec::for_origin(origin, 10_000, strength, seed)).unwrap();
            let flags = scenario_checks(&data, &check_config(seed, 199));
            flags.map(u32::from)
        })
        .reduce(|| [0u32; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    counts.map(|c| f64::from(c) / f64::from(trials))
}

#[test]
fn criterion_3_injection_power_study() {
    let started = Instant::now();
    const CHECK_NAMES: [&str; 3] = ["selection", "label", "overamp"];
    // (origin, calibrated strength, index of the matching check)
    let cases = [
        (ScenarioOrigin::Label, 0.2, 1usize),
        (ScenarioOrigin::Selection, 0.15, 0),
        (ScenarioOrigin::Overamp, 0.08, 2),
    ];
    for (origin, strength, matching) in cases {
        let rates = flag_rates(origin, strength, 200, &format!("acceptance.power.{origin:?}"));
        for (i, rate) in rates.iter().enumerate() {
            if i == matching {
                assert!(
                    *rate >= 0.95,
                    "criterion 3: {origin:?} matching check power {rate}"
                );
            } else {
                assert!(
                    *rate <= 0.07,
                    "criterion 3: {origin:?} scenario, {} check false-positive rate {rate}",
                    CHECK_NAMES[i]
                );
            }
        }
    }
    let rates = flag_rates(ScenarioOrigin::None, 0.0, 200, "acceptance.power.none");
    for (i, rate) in rates.iter().enumerate() {
        assert!(
            *rate <= 0.07,
            "criterion 3: clean scenario, {} check false-positive rate {rate}",
            CHECK_NAMES[i]
        );
    }
    pass(3, "injection power study", started, Some(Duration::from_secs(300)));
}

// --- 4. countermeasure closure ----------------------------------------------

#[test]
fn criterion_4_countermeasure_closure() {
    let started = Instant::now();
    let half = table(&[("a", 0.5), ("b", 0.5)]);

    // Post-stratification closes the 0.8/0.2 -> 0.5/0.5 selection skew.
    let seed = derive_seed(ROOT, "acceptance.closure");
    let data = generate(&ScenarioSpec::for_origin(ScenarioOrigin::Selection, 10_000, 0.3, seed))
        .unwrap();
    let attr = &data.meta.attribute;
    let resolver = AttributeResolver::build(attr, &[&data.source]).unwrap();
    let (marginal, _) =
        attribute_marginal(&data.source, &resolver, SplitFilter::Source, 0.0).unwrap();
    assert!((marginal["a"] - 0.8).abs() < 1e-12 && (marginal["b"] - 0.2).abs() < 1e-12);
    let assignment = poststratify_weights(&marginal, &half).unwrap();
    assert!((assignment.weights["a"] - 0.625).abs() < 1e-12);
    assert!((assignment.weights["b"] - 2.5).abs() < 1e-12);
    let weighted = apply_weights(&data.source, attr, &assignment).unwrap();
    let config = check_config(seed, 199);
    let finding =
        selection_bias_check(&weighted, &TargetReference::Marginal(half.clone()), attr, &config)
            .unwrap();
    assert!(
        finding.divergence.statistic < 1e-9,
        "criterion 4: residual divergence {}",
        finding.divergence.statistic
    );

    // Stratified downsampling hits the target marginal within 1/n.
    let down = stratified_resample(&data.source, attr, &half, ResampleMode::Down, seed).unwrap();
    let dres = AttributeResolver::build(attr, &[&down]).unwrap();
    let (dmarg, _) = attribute_marginal(&down, &dres, SplitFilter::Both, 0.0).unwrap();
    let slack = 1.0 / down.records.len() as f64 + 1e-12;
    for cell in ["a", "b"] {
        assert!(
            (dmarg[cell] - 0.5).abs() <= slack,
            "criterion 4: downsampled {cell} marginal {}",
            dmarg[cell]
        );
    }

    // Counterfactual augmentation balances the swap pair exactly.
    let corpus = template_corpus(2_000, 0.8, derive_seed(ROOT, "acceptance.augment")).unwrap();
    let lexicon = SwapLexicon::new(vec![("he".into(), "she".into())]).unwrap();
    let augmented = counterfactual_augment(&corpus, &lexicon, None).unwrap();
    let count_word = |word: &str| -> usize {
        augmented
            .records
            .iter()
            .filter_map(|r| r.text.as_deref())
            .flat_map(|t| {
                t.split(|c: char| !(c.is_alphanumeric() || c == '\''))
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .filter(|w| w == word)
            .count()
    };
    let (he, she) = (count_word("he"), count_word("she"));
    assert!(he > 0 && he == she, "criterion 4: token counts he {he} she {she}");

    // Threshold matching hits the ideal positive rates within 1/n_cell.
    let mut rng = rng_for(derive_seed(ROOT, "acceptance.threshold"));
    let scores: BTreeMap<String, Vec<f64>> = [("a", 1_000usize), ("b", 1_000)]
        .iter()
        .map(|(cell, n)| (cell.to_string(), (0..*n).map(|_| rng.gen::<f64>()).collect()))
        .collect();
    let rates = table(&[("a", 0.25), ("b", 0.4)]);
    let matched = threshold_match(&scores, &rates).unwrap();
    for (cell, want) in &rates {
        let n_cell = scores[cell].len() as f64;
        let got = matched.achieved_rates[cell];
        assert!(
            (got - want).abs() <= 1.0 / n_cell + 1e-12,
            "criterion 4: cell {cell} rate {got} vs {want}"
        );
        let recount = scores[cell].iter().filter(|s| **s >= matched.thresholds[cell]).count();
        assert_eq!(recount as f64 / n_cell, got, "criterion 4: threshold recount in {cell}");
    }

    pass(4, "countermeasure closure", started, Some(Duration::from_secs(30)));
}

// --- 5. embedding probe suite ------------------------------------------------

fn planted_axis() -> (EmbeddingSet, WeatSpec) {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let mut entries = Vec::new();
    for i in 0..8 {
        entries.push((format!("x{i}"), e1.clone()));
        entries.push((format!("y{i}"), e2.clone()));
    }
    entries.push(("a1".into(), e1));
    entries.push(("b1".into(), e2));
    let spec = WeatSpec {
        name: None,
        x: (0..8).map(|i| format!("x{i}")).collect(),
        y: (0..8).map(|i| format!("y{i}")).collect(),
        a: vec!["a1".into()],
        b: vec!["b1".into()],
    };
    (EmbeddingSet::new(entries).unwrap(), spec)
}

#[test]
fn criterion_5_embedding_probes() {
    let started = Instant::now();

    // Planted axis-aligned sets: effect exactly 2.0, permutation p at floor.
    let (emb, spec) = planted_axis();
    let planted = weat(&emb, &spec, 999, derive_seed(ROOT, "acceptance.weat.planted")).unwrap();
    assert!(
        (planted.effect_size - 2.0).abs() < 1e-9,
        "criterion 5: planted effect {}",
        planted.effect_size
    );
    assert!(planted.p_value <= 0.01, "criterion 5: planted p {}", planted.p_value);

    // Identically distributed targets: small mean effect over 50 trials.
    let null_stream = derive_seed(ROOT, "acceptance.weat.null");
    let mut effects = Vec::new();
    for trial in 0..50u64 {
        let mut rng = rng_for(replicate_seed(null_stream, trial));
        let entries: Vec<(String, Vec<f64>)> = (0..50)
            .map(|i| (format!("w{i:02}"), (0..20).map(|_| rng.gen_range(-1.0..1.0f64)).collect()))
            .collect();
        let emb = EmbeddingSet::new(entries).unwrap();
        let spec = WeatSpec {
            name: None,
            x: (0..20).map(|i| format!("w{i:02}")).collect(),
            y: (20..40).map(|i| format!("w{i:02}")).collect(),
            a: (40..45).map(|i| format!("w{i:02}")).collect(),
            b: (45..50).map(|i| format!("w{i:02}")).collect(),
        };
        effects.push(weat(&emb, &spec, 199, trial).unwrap().effect_size.abs());
    }
    let mean_abs = effects.iter().sum::<f64>() / effects.len() as f64;
    assert!(mean_abs < 0.3, "criterion 5: null mean |effect| {mean_abs}");

    // Debiasing: neutral words lose their bias-direction projection, the
    // operation is idempotent, and the planted association collapses.
    let emb = EmbeddingSet::new(vec![
        ("he".into(), vec![1.0, 0.0, 0.0]),
        ("she".into(), vec![-1.0, 0.0, 0.0]),
        ("a1".into(), vec![0.9, 0.3, 0.1]),
        ("b1".into(), vec![-0.9, 0.1, 0.3]),
        ("x1".into(), vec![0.8, 0.6, 0.0]),
        ("x2".into(), vec![0.7, 0.0, 0.714142842854285]),
        ("y1".into(), vec![-0.8, 0.6, 0.0]),
        ("y2".into(), vec![-0.7, 0.0, 0.714142842854285]),
    ])
    .unwrap();
    let spec = WeatSpec {
        name: None,
        x: vec!["x1".into(), "x2".into()],
        y: vec!["y1".into(), "y2".into()],
        a: vec!["a1".into()],
        b: vec!["b1".into()],
    };
    let probe_seed = derive_seed(ROOT, "acceptance.weat.debias");
    let before = weat(&emb, &spec, 499, probe_seed).unwrap();
    assert!(before.effect_size.abs() > 1.5, "criterion 5: planted effect {}", before.effect_size);
    let pair = ("he".to_string(), "she".to_string());
    let neutrals: Vec<String> = ["x1", "x2", "y1", "y2"].map(String::from).to_vec();
    let debiased = hard_debias(&emb, &[pair.clone()], &neutrals, &[]).unwrap();
    // The bias direction of this construction is the first axis.
    for word in &neutrals {
        let projection = debiased.vector(word).unwrap()[0].abs();
        assert!(projection < 1e-6, "criterion 5: {word} projection {projection}");
    }
    let twice = hard_debias(&debiased, &[pair], &neutrals, &[]).unwrap();
    for word in ["he", "she", "a1", "b1", "x1", "x2", "y1", "y2"] {
        let (v1, v2) = (debiased.vector(word).unwrap(), twice.vector(word).unwrap());
        for (a, b) in v1.iter().zip(v2) {
            assert!((a - b).abs() < 1e-6, "criterion 5: {word} moved on second debias");
        }
    }
    let after = weat(&debiased, &spec, 499, probe_seed).unwrap();
    assert!(
        after.effect_size.abs() < 0.05,
        "criterion 5: post-debias effect {}",
        after.effect_size
    );

    // Masked log-probability oracle: ln(0.6 / 0.5).
    let scorer = ToyScorer::new(
        BTreeMap::from([("she".to_string(), 0.5), ("he".to_string(), 0.5)]),
        BTreeMap::from([(
            "nurse".to_string(),
            BTreeMap::from([("she".to_string(), 0.6), ("he".to_string(), 0.5 * 0.5 / 0.6)]),
        )]),
    );
    let template = TwoSlotTemplate::new("[PRON] is a [NOUN]").unwrap();
    let bias = masked_logprob_bias(&scorer, "nurse", "she", &template).unwrap();
    assert!((bias - 0.182322).abs() < 1e-6, "criterion 5: masked bias {bias}");

    pass(5, "embedding probes", started, Some(Duration::from_secs(10)));
}

// --- 6. interaction-matrix quadrants ----------------------------------------

#[test]
fn criterion_6_interaction_matrix_quadrants() {
    let started = Instant::now();
    let quadrants: [(ScenarioOrigin, f64, &[BiasOrigin]); 4] = [
        (
            ScenarioOrigin::Compound,
            0.2,
            &[BiasOrigin::SelectionBias, BiasOrigin::LabelBias],
        ),
        (ScenarioOrigin::Selection, 0.15, &[BiasOrigin::SelectionBias]),
        (ScenarioOrigin::Label, 0.2, &[BiasOrigin::LabelBias]),
        (ScenarioOrigin::None, 0.0, &[]),
    ];
    for (origin, strength, expected) in quadrants {
        let expected: BTreeSet<BiasOrigin> = expected.iter().copied().collect();
        let stream = derive_seed(ROOT, &format!("acceptance.matrix.{origin:?}"));
        let hits: u32 = (0..100u32)
            .into_par_iter()
            .map(|t| {
                let seed = replicate_seed(stream, u64::from(t));
                let data =
                    generate(&ScenarioSpec::for_origin(origin, 10_000, strength, seed)).unwrap();
                let matrix = diagnose(
                    &data.source,
                    Some(&TargetReference::Dataset(&data.target_reference)),
                    Some(&data.trusted_reference),
                    None,
                    &data.meta.attribute,
                    &check_config(seed, 199),
                )
                .unwrap();
                let got: BTreeSet<BiasOrigin> = matrix.diagnosis.iter().copied().collect();
                u32::from(got == expected)
            })
            .sum();
        assert!(hits >= 95, "criterion 6: {origin:?} quadrant correct in {hits}/100 seeds");
    }
    pass(6, "interaction matrix quadrants", started, None);
}

// --- 7. end-to-end command contract ------------------------------------------

fn biaslens(epoch: &str) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_biaslens"));
    cmd.env_remove("BIASLENS_SEED")
        .env_remove("BIASLENS_FAULT_EXIT_BEFORE_RENAME")
        .env("SOURCE_DATE_EPOCH", epoch);
    cmd
}

fn exit_code(out: &std::process::Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

const GRID_CONFIG: &str = "attributes = [\"group\"]\n\
    n_permutations = 199\n\
    seed = 11\n\n\
    [ideal]\n\
    kind = \"empirical_from\"\n";

fn scenario_toml(origin: &str, strength: f64, rate_a: f64, rate_b: f64) -> String {
    format!(
        "origin = \"{origin}\"\nn = 4000\ninjection_strength = {strength}\nseed = 17\n\n\
         [attribute_cells]\na = 0.5\nb = 0.5\n\n[base_rates]\na = {rate_a}\nb = {rate_b}\n"
    )
}

/// Generate a scenario with the binary, audit it, and return the exit code
/// plus the raw report bytes.
fn run_grid_audit(root: &Path, name: &str, spec: &str) -> (i32, Vec<u8>, Vec<u8>) {
    let spec_path = root.join(format!("{name}.toml"));
    std::fs::write(&spec_path, spec).unwrap();
    let data_dir = root.join(format!("{name}-data"));
    let synth = biaslens("1700000000")
        .args(["synth", "--scenario"])
        .arg(&spec_path)
        .arg("--out")
        .arg(&data_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&synth), 0, "criterion 7: synth {name} failed: {synth:?}");

    let out_dir = root.join(format!("{name}-report"));
    let audit = biaslens("1700000000")
        .arg("audit")
        .arg("--data")
        .arg(data_dir.join("source.jsonl"))
        .arg("--config")
        .arg(root.join("config.toml"))
        .arg("--target-ref")
        .arg(data_dir.join("target.jsonl"))
        .arg("--trusted-ref")
        .arg(data_dir.join("reference.json"))
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    let json = std::fs::read(out_dir.join("report.json"))
        .unwrap_or_else(|e| panic!("criterion 7: {name} report.json missing: {e}"));
    let md = std::fs::read(out_dir.join("report.md")).unwrap();
    (exit_code(&audit), json, md)
}

#[test]
fn criterion_7_end_to_end_contracts() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::write(root.join("config.toml"), GRID_CONFIG).unwrap();

    let schema: serde_json::Value = serde_json::from_str(biaslens::report::REPORT_SCHEMA).unwrap();
    let grid = [
        ("none", scenario_toml("none", 0.0, 0.25, 0.25), 0),
        ("selection", scenario_toml("selection", 0.3, 0.25, 0.25), 2),
        ("label", scenario_toml("label", 0.3, 0.25, 0.25), 2),
        ("overamp", scenario_toml("overamp", 0.1, 0.45, 0.25), 2),
    ];
    let mut selection_report = Vec::new();
    let mut selection_md = Vec::new();
    for (name, spec, expected_exit) in &grid {
        let (code, json, md) = run_grid_audit(root, name, spec);
        assert_eq!(
            code, *expected_exit,
            "criterion 7: {name} scenario exit {code}, expected {expected_exit}"
        );
        let report: serde_json::Value = serde_json::from_slice(&json).unwrap();
        let errors = biaslens::schema::validate(&schema, &report);
        assert!(errors.is_empty(), "criterion 7: {name} schema violations {errors:?}");
        if *name == "selection" {
            selection_report = json;
            selection_md = md;
        }
    }

    // Identical inputs and seed reproduce the reports byte for byte.
    let (code, json, md) =
        run_grid_audit(root, "selection-rerun", &scenario_toml("selection", 0.3, 0.25, 0.25));
    assert_eq!(code, 2);
    assert_eq!(json, selection_report, "criterion 7: report.json differs across reruns");
    assert_eq!(md, selection_md, "criterion 7: report.md differs across reruns");

    // Broken inputs exit 1 and leave no report files behind.
    let broken_out = root.join("broken-report");
    let missing_config = biaslens("1700000000")
        .arg("audit")
        .arg("--data")
        .arg(root.join("selection-data").join("source.jsonl"))
        .arg("--config")
        .arg(root.join("nope.toml"))
        .arg("--out")
        .arg(&broken_out)
        .output()
        .unwrap();
    assert_eq!(exit_code(&missing_config), 1, "criterion 7: missing config");
    assert!(!String::from_utf8_lossy(&missing_config.stderr).is_empty());

    let bad_data = root.join("bad.jsonl");
    std::fs::write(&bad_data, "this is not a record\n").unwrap();
    let malformed = biaslens("1700000000")
        .arg("audit")
        .arg("--data")
        .arg(&bad_data)
        .arg("--config")
        .arg(root.join("config.toml"))
        .arg("--out")
        .arg(&broken_out)
        .output()
        .unwrap();
    assert_eq!(exit_code(&malformed), 1, "criterion 7: malformed data");
    assert!(!broken_out.join("report.json").exists(), "criterion 7: partial report.json");
    assert!(!broken_out.join("report.md").exists(), "criterion 7: partial report.md");

    let empty_spec = root.join("empty.toml");
    std::fs::write(&empty_spec, "origin = \"none\"\nn = 0\n").unwrap();
    let empty_dir = root.join("empty-data");
    let empty = biaslens("1700000000")
        .args(["synth", "--scenario"])
        .arg(&empty_spec)
        .arg("--out")
        .arg(&empty_dir)
        .output()
        .unwrap();
    assert_eq!(exit_code(&empty), 1, "criterion 7: empty scenario");
    assert!(!empty_dir.join("source.jsonl").exists());

    pass(7, "end-to-end contracts", started, None);
}
