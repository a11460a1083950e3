use compl_core::decision::DecisionProblem;
use compl_core::eval::bootstrap::{bootstrap_ci, bootstrap_distribution, percentile_interval};
use compl_core::eval::similarity::{f1_similarity, surface_similarity};
use compl_core::eval::{self, DeterministicJudge, EvalConfig, ExtractionRecord};
use compl_core::synth::{self, OutcomeRule, SynthConfig, SynthPaths};
use compl_core::SignalVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn generator_is_deterministic_on_disk() {
    let cfg = SynthConfig {
        n: 300,
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let read = |p: &SynthPaths| {
        [&p.dataset, &p.occurrences, &p.truth, &p.oracle].map(|f| std::fs::read(f).unwrap())
    };
    let a = synth::write_outputs(&synth::generate(&cfg).unwrap(), &dir.path().join("a.jsonl")).unwrap();
    let b = synth::write_outputs(&synth::generate(&cfg).unwrap(), &dir.path().join("b.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(a.occurrences.ends_with("a.occ.json"));
    let c = synth::generate(&SynthConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(synth::generate(&SynthConfig { n: 300, ..SynthConfig::default() }).unwrap().full_scores, c.full_scores);
}

#[test]
fn recommendation_omits_exactly_the_held_out_findings() {
    let cfg = SynthConfig::default();
    let out = synth::generate(&cfg).unwrap();
    let occ = out.dataset.occurrences().unwrap();
    for (i, inst) in out.dataset.instances.iter().enumerate() {
        let mut rec = cfg.intercept;
        let mut full = cfg.intercept;
        for s in &cfg.signals {
            let j = out.dataset.space.index_of(&s.name).unwrap();
            if occ[i].get(j) {
                full += s.coefficient;
                if !cfg.held_out.contains(&s.name) {
                    rec += s.coefficient;
                }
            }
        }
        assert!((out.full_scores[i] - full).abs() < 1e-12);
        assert!((out.recommendation_scores[i] - rec).abs() < 1e-12);
        assert!((inst.recommendation - 1.0 / (1.0 + (-rec).exp())).abs() < 1e-12);
        assert_eq!(inst.state.as_str(), if full > 0.0 { "1" } else { "0" });
        for s in &cfg.signals {
            let j = out.dataset.space.index_of(&s.name).unwrap();
            let stated = inst.text.contains(&format!("There is {}.", s.name.replace('_', " ")));
            assert_eq!(stated, occ[i].get(j));
            assert_eq!(out.complementary[i].get(j), occ[i].get(j) && cfg.held_out.contains(&s.name));
        }
    }
}

#[test]
fn zero_coefficients_give_a_constant_recommendation() {
    let mut cfg = SynthConfig {
        intercept: 0.4,
        n: 4000,
        outcome: OutcomeRule::Bernoulli,
        ..SynthConfig::default()
    };
    cfg.signals.iter_mut().for_each(|s| s.coefficient = 0.0);
    let out = synth::generate(&cfg).unwrap();
    let p = 1.0 / (1.0 + (-0.4f64).exp());
    assert!(out.dataset.instances.iter().all(|i| (i.recommendation - p).abs() < 1e-15));
    let rate = out.dataset.instances.iter().filter(|i| i.state.as_str() == "1").count() as f64 / 4000.0;
    assert!((rate - p).abs() < 4.0 * (p * (1.0 - p) / 4000.0).sqrt(), "{rate}");
}

#[test]
fn polarity_expansion_is_mutually_exclusive() {
    let out = synth::generate(&SynthConfig {
        n: 500,
        ..SynthConfig::with_polarity()
    })
    .unwrap();
    let space = &out.dataset.space;
    assert_eq!(space.len(), 3 * SynthConfig::default().signals.len());
    assert!(space.names().all(|n| ["positive_", "negative_", "uncertain_"].iter().any(|p| n.starts_with(p))));
    for row in out.dataset.occurrences().unwrap() {
        for chunk in row.bits().chunks(3) {
            assert!(chunk.iter().filter(|&&b| b).count() <= 1);
        }
    }
}

#[test]
fn unknown_held_out_name_is_rejected() {
    let cfg = SynthConfig {
        held_out: names(&["not_a_finding"]),
        ..SynthConfig::default()
    };
    assert!(synth::generate(&cfg).is_err());
}

#[test]
fn bernoulli_interval_matches_normal_approximation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..1000).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mean = values.iter().sum::<f64>() / 1000.0;
    let (lo, hi) = bootstrap_ci(&values, 5000, 0.95, 3).unwrap();
    assert!((lo - (mean - 0.031)).abs() < 0.01, "{lo} vs {mean}");
    assert!((hi - (mean + 0.031)).abs() < 0.01, "{hi} vs {mean}");

    let half = 1.959964 * (mean * (1.0 - mean) / 1000.0).sqrt();
    assert!(((hi - lo) / 2.0 - half).abs() < 0.003);
}

#[test]
fn bootstrap_is_independent_of_worker_count_and_widens_with_level() {
    let values: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64).collect();
    let stat = |idx: &[usize]| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
    let one = bootstrap_distribution(values.len(), 400, 5, 1, stat).unwrap();
    let many = bootstrap_distribution(values.len(), 400, 5, 7, stat).unwrap();
    assert_eq!(one, many);
    let width = |level: f64| {
        let (lo, hi) = percentile_interval(one.clone(), level).unwrap();
        hi - lo
    };
    assert!(width(0.8) < width(0.95) && width(0.95) < width(0.99));
}

#[test]
fn deterministic_judge_similarity_examples() {
    let j = DeterministicJudge;
    let gt = names(&["edema", "pleural_effusion"]);
    assert_eq!(surface_similarity(&gt, &gt, &j).unwrap(), Some(1.0));
    assert_eq!(f1_similarity(&gt, &gt, &j).unwrap(), 1.0);
    assert_eq!(surface_similarity(&gt, &names(&["fracture"]), &j).unwrap(), Some(0.0));
    assert!((f1_similarity(&gt, &names(&["edema"]), &j).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(surface_similarity(&[], &names(&["edema"]), &j).unwrap(), None);
    assert_eq!(f1_similarity(&[], &[], &j).unwrap(), 1.0);
    assert_eq!(surface_similarity(&names(&["positive_edema"]), &names(&["negative_edema"]), &j).unwrap(), Some(0.5));

    let r = eval::similarity_metrics(
        &[gt.clone(), vec![], names(&["edema"])],
        &[gt.clone(), vec![], vec![]],
        &j,
        2,
    )
    .unwrap();
    assert_eq!(r.instances_with_reference, 2);
    assert_eq!(r.surface, Some(0.5));
    assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn all_zero_extractions_have_no_value() {
    let out = synth::generate(&SynthConfig {
        n: 1000,
        ..SynthConfig::default()
    })
    .unwrap();
    let rows = vec![SignalVector::zeros(3); 1000];
    let r = eval::civ(&out.dataset.instances, &rows, &DecisionProblem::binary_accuracy(), &EvalConfig {
        bootstrap_resamples: 500,
        ..EvalConfig::default()
    })
    .unwrap();
    let half = (r.hi - r.lo) / 2.0;
    assert!(r.estimate.abs() <= half.max(1e-9), "{r:?}");
}

#[test]
fn oracle_extractions_carry_value_and_single_class_splits_fail() {
    let out = synth::generate(&SynthConfig::default()).unwrap();
    let names = eval::names_by_instance(&out.dataset.instances, &out.truth.complementary);
    let (space, rows) = eval::extraction_matrix(&names).unwrap();
    assert_eq!(space.names().collect::<Vec<_>>(), vec!["edema", "pleural_effusion"]);
    let problem = DecisionProblem::binary_accuracy();
    let r = eval::civ(&out.dataset.instances, &rows, &problem, &EvalConfig::default()).unwrap();
    assert!(r.lo > 0.0 && r.lo <= r.estimate && r.estimate <= r.hi);

    let mut same = out.dataset.instances.clone();
    same.iter_mut().for_each(|i| i.state = "1".into());
    let err = eval::civ(&same, &rows, &problem, &EvalConfig::default()).unwrap_err();
    assert!(err.to_string().contains("fit split"), "{err}");
}

#[test]
fn extraction_files_round_trip_and_align_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    let recs = vec![
        ExtractionRecord {
            id: "b".into(),
            signals: names(&["edema"]),
        },
        ExtractionRecord {
            id: "a".into(),
            signals: vec![],
        },
    ];
    eval::write_extractions(&path, &recs).unwrap();
    assert_eq!(eval::read_extractions(&path).unwrap(), recs);
    let inst = vec![
        compl_core::Instance::new("a", "", 0.5, "0"),
        compl_core::Instance::new("b", "", 0.5, "1"),
        compl_core::Instance::new("c", "", 0.5, "1"),
    ];
    assert_eq!(eval::names_by_instance(&inst, &recs), vec![vec![], names(&["edema"]), vec![]]);
}
