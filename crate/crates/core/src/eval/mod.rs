//! Extractor evaluation: surface and F1 similarity against reference names,
//! complementary information value with a bootstrap interval, and breadth
//! (the number of extracted signals with significant logit coefficients
//! controlling for the recommendation).

pub mod bootstrap;
pub mod similarity;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{read_jsonl, write_jsonl, Instance, SignalSpace, SignalVector};
use crate::decision::{expected_best_payoff, DecisionProblem, Posterior};
use crate::dgp::normalize_signal_name;
use crate::error::{Error, Result};
use crate::posterior::glm::{self, GlmFit};

pub use bootstrap::bootstrap_ci;
pub use similarity::{DeterministicJudge, LlmJudge, LlmJudgeConfig, SimilarityJudge};

/// One line of an extraction or reference file. `labels` is accepted as an alias
/// so supervised records can serve as references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub id: String,
    #[serde(alias = "labels")]
    pub signals: Vec<String>,
}

pub fn read_extractions(path: &Path) -> Result<Vec<ExtractionRecord>> {
    read_jsonl(path)
}

pub fn write_extractions(path: &Path, records: &[ExtractionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Normalized names per instance, in instance order. Instances missing from `records` get no names.
pub fn names_by_instance(instances: &[Instance], records: &[ExtractionRecord]) -> Vec<Vec<String>> {
    let by_id: HashMap<&str, &ExtractionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    instances
        .iter()
        .map(|inst| {
            let set: BTreeSet<String> = by_id
                .get(inst.id.as_str())
                .map(|r| r.signals.iter().filter_map(|n| normalize_signal_name(n)).collect())
                .unwrap_or_default();
            set.into_iter().collect()
        })
        .collect()
}

/// The sorted union of extracted names, and each instance's vector over it.
pub fn extraction_matrix(names: &[Vec<String>]) -> Result<(SignalSpace, Vec<SignalVector>)> {
    let all: BTreeSet<&String> = names.iter().flatten().collect();
    let space = SignalSpace::from_names(all)?;
    let rows = names
        .iter()
        .map(|n| space.vector_from_names(n).expect("names come from the space"))
        .collect();
    Ok((space, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BreadthThreshold {
    /// Per-test threshold `family_alpha / M`.
    Bonferroni { family_alpha: f64 },
    Fixed { p: f64 },
}

impl Default for BreadthThreshold {
    fn default() -> Self {
        BreadthThreshold::Bonferroni { family_alpha: 0.05 }
    }
}

impl BreadthThreshold {
    pub fn per_test(&self, m: usize) -> f64 {
        match *self {
            BreadthThreshold::Bonferroni { family_alpha } => family_alpha / m.max(1) as f64,
            BreadthThreshold::Fixed { p } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Share of instances used to fit the two regressions; the rest are scored.
    pub civ_fit_fraction: f64,
    pub l2: f64,
    pub breadth_threshold: BreadthThreshold,
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: bootstrap::DEFAULT_RESAMPLES,
            level: bootstrap::DEFAULT_LEVEL,
            seed: 0,
            civ_fit_fraction: 0.5,
            l2: 1e-4,
            breadth_threshold: BreadthThreshold::default(),
            workers: 4,
        }
    }
}

fn binary_outcomes(instances: &[Instance], problem: &DecisionProblem) -> Result<Vec<f64>> {
    if !problem.is_binary() {
        return Err(Error::contract("logit evaluation requires a binary state space"));
    }
    instances
        .iter()
        .map(|i| Ok(problem.state_index(&i.state)? as f64))
        .collect()
}

fn features(rows: &[SignalVector], instances: &[Instance], idx: &[usize], with_signals: bool) -> Vec<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            let mut f: Vec<f64> = if with_signals {
                rows[i].bits().iter().map(|&b| b as u8 as f64).collect()
            } else {
                Vec::new()
            };
            f.push(instances[i].recommendation);
            f
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CivResult {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_fit: usize,
    pub n_eval: usize,
}

/// Expected-mode payoff gain of a logit on (signals, z) over a logit on z, scored on held-out instances.
pub fn civ(instances: &[Instance], rows: &[SignalVector], problem: &DecisionProblem, config: &EvalConfig) -> Result<CivResult> {
    if rows.len() != instances.len() {
        return Err(Error::contract("extraction rows and instances differ in length"));
    }
    if !(config.civ_fit_fraction > 0.0 && config.civ_fit_fraction < 1.0) {
        return Err(Error::contract("civ fit fraction must lie in (0, 1)"));
    }
    let n = instances.len();
    if n < 2 {
        return Err(Error::contract("civ needs at least two instances"));
    }
    let y = binary_outcomes(instances, problem)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_fit = ((n as f64 * config.civ_fit_fraction).round() as usize).clamp(1, n - 1);
    let (mut fit_idx, mut eval_idx) = (idx[..n_fit].to_vec(), idx[n_fit..].to_vec());
    fit_idx.sort_unstable();
    eval_idx.sort_unstable();
    for (name, part) in [("fit", &fit_idx), ("evaluation", &eval_idx)] {
        let first = y[part[0]];
        if part.iter().all(|&i| y[i] == first) {
            return Err(Error::Pipeline(format!("the {name} split contains a single class")));
        }
    }
    let y_fit: Vec<f64> = fit_idx.iter().map(|&i| y[i]).collect();
    let with = glm::fit_logistic(&features(rows, instances, &fit_idx, true), &y_fit, config.l2)?;
    let without = glm::fit_logistic(&features(rows, instances, &fit_idx, false), &y_fit, config.l2)?;
    let xw = features(rows, instances, &eval_idx, true);
    let xo = features(rows, instances, &eval_idx, false);
    let diffs = xw
        .iter()
        .zip(&xo)
        .map(|(a, b)| {
            let pw = Posterior::binary(glm::sigmoid(glm::linear_predictor(&with.coefficients, a)))?;
            let po = Posterior::binary(glm::sigmoid(glm::linear_predictor(&without.coefficients, b)))?;
            Ok(expected_best_payoff(&pw, problem)? - expected_best_payoff(&po, problem)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let estimate = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let stats = bootstrap::bootstrap_distribution(diffs.len(), config.bootstrap_resamples, config.seed, config.workers, |s| {
        s.iter().map(|&i| diffs[i]).sum::<f64>() / s.len() as f64
    })?;
    let (lo, hi) = bootstrap::percentile_interval(stats, config.level)?;
    Ok(CivResult {
        estimate,
        lo: lo.min(estimate),
        hi: hi.max(estimate),
        level: config.level,
        n_fit: fit_idx.len(),
        n_eval: eval_idx.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSignificance {
    pub name: String,
    pub coefficient: f64,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    /// In-sample accuracy of the full logit minus that of the logit refit without this signal.
    pub delta_accuracy: f64,
    /// Set when the information matrix gave no usable variance for this coefficient.
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreadthResult {
    pub count: usize,
    pub per_test_threshold: f64,
    pub accuracy: f64,
    pub signals: Vec<SignalSignificance>,
}

fn in_sample_accuracy(fit: &GlmFit, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let hits = x
        .iter()
        .zip(y)
        .filter(|(row, &yi)| (glm::sigmoid(glm::linear_predictor(&fit.coefficients, row)) > 0.5) == (yi > 0.5))
        .count();
    hits as f64 / y.len() as f64
}

/// Wald tests on every signal coefficient of a logit on (signals, z) fitted to all instances.
pub fn breadth(
    instances: &[Instance],
    space: &SignalSpace,
    rows: &[SignalVector],
    problem: &DecisionProblem,
    config: &EvalConfig,
) -> Result<BreadthResult> {
    crate::data::check_rows(rows, instances.len(), space.len())?;
    if instances.is_empty() {
        return Err(Error::contract("breadth needs at least one instance"));
    }
    let y = binary_outcomes(instances, problem)?;
    let all: Vec<usize> = (0..instances.len()).collect();
    let x = features(rows, instances, &all, true);
    let fit = glm::fit_logistic(&x, &y, config.l2)?;
    let accuracy = in_sample_accuracy(&fit, &x, &y);
    let m = space.len();
    let threshold = config.breadth_threshold.per_test(m);
    let normal = Normal::standard();

    let reduced: Vec<f64> = crate::pool::parallel_map(&(0..m).collect::<Vec<_>>(), config.workers, |_, &j| {
        let xr: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| *v).collect())
            .collect();
        glm::fit_logistic(&xr, &y, config.l2).map(|f| in_sample_accuracy(&f, &xr, &y))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let signals: Vec<SignalSignificance> = (0..m)
        .map(|j| {
            let beta = fit.coefficients[j + 1];
            let var = fit.covariance.as_ref().map(|c| c[(j + 1, j + 1)]);
            let se = var.filter(|v| v.is_finite() && *v > 0.0).map(f64::sqrt);
            let p = se.map(|s| 2.0 * (1.0 - normal.cdf((beta / s).abs())));
            SignalSignificance {
                name: space.name(j).to_string(),
                coefficient: beta,
                std_error: se,
                p_value: p,
                significant: p.is_some_and(|p| p < threshold),
                delta_accuracy: accuracy - reduced[j],
                singular: se.is_none(),
            }
        })
        .collect();
    Ok(BreadthResult {
        count: signals.iter().filter(|s| s.significant).count(),
        per_test_threshold: threshold,
        accuracy,
        signals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    /// Mean over instances with a non-empty reference; `None` when there are none.
    pub surface: Option<f64>,
    pub f1: f64,
    pub instances_with_reference: usize,
}

/// Instance-mean surface and F1 similarity.
pub fn similarity_metrics<J: SimilarityJudge + ?Sized>(
    reference: &[Vec<String>],
    extracted: &[Vec<String>],
    judge: &J,
    workers: usize,
) -> Result<SimilarityResult> {
    if reference.len() != extracted.len() {
        return Err(Error::contract("reference and extraction lists differ in length"));
    }
    let idx: Vec<usize> = (0..reference.len()).collect();
    let per = crate::pool::parallel_map(&idx, workers, |_, &i| {
        let sim = similarity::similarity_matrix(judge, &reference[i], &extracted[i])?;
        Ok((similarity::surface_similarity_from(&sim), similarity::f1_from(&sim, extracted[i].len())))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let surfaces: Vec<f64> = per.iter().filter_map(|p| p.0).collect();
    Ok(SimilarityResult {
        surface: (!surfaces.is_empty()).then(|| surfaces.iter().sum::<f64>() / surfaces.len() as f64),
        f1: if per.is_empty() { 1.0 } else { per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64 },
        instances_with_reference: surfaces.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub signals: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilarityResult>,
    pub civ: CivResult,
    pub breadth: BreadthResult,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Tab-separated table with one row per signal.
    pub fn signal_table(&self) -> String {
        let mut out = String::from("signal\tcoefficient\tstd_error\tp_value\tsignificant\tdelta_accuracy\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
        for s in &self.breadth.signals {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.name,
                s.coefficient,
                opt(s.std_error),
                opt(s.p_value),
                s.significant,
                s.delta_accuracy
            );
        }
        out
    }
}
