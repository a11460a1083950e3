//! Posterior estimation `π(y | signals, z)` by regression with greedy
//! main-effect and pairwise-interaction selection.
//!
//! The recommendation `z` is always in the model. Phase 1 adds the unused
//! signal whose inclusion most improves the held-out score, while the
//! improvement exceeds `epsilon_main`. Phase 2 does the same for pairwise
//! interactions among the selected signals with `epsilon_int`. Every
//! candidate is scored by refitting on the training split and scoring the
//! validation split; the final structure is refit on all rows.

pub mod glm;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json, Dataset, SignalVector};
use crate::decision::{DecisionProblem, Posterior, PosteriorEstimator};
use crate::error::{Error, Result};
use crate::pool::parallel_map;

pub use glm::Link;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Mean held-out log-likelihood (unit-variance Gaussian for the identity link).
    #[default]
    LogLikelihood,
    Accuracy,
    /// Negated mean squared error of the predicted probability.
    Brier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epsilon_main: f64,
    pub epsilon_int: f64,
    pub scoring: Scoring,
    pub validation_fraction: f64,
    pub seed: u64,
    pub l2: f64,
    /// Forces a link; by default logistic for binary problems.
    pub link: Option<Link>,
    /// Threads used to score candidates within one greedy step.
    pub workers: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon_main: 1e-3,
            epsilon_int: 1e-3,
            scoring: Scoring::LogLikelihood,
            validation_fraction: 0.2,
            seed: 0,
            l2: 1e-4,
            link: None,
            workers: 4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_main >= 0.0 && self.epsilon_int >= 0.0) {
            return Err(Error::contract("selection thresholds must be non-negative"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::contract("validation fraction must lie in (0, 1)"));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::contract("L2 strength must be non-negative"));
        }
        Ok(())
    }
}

/// One regressor of the model (the intercept is implicit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Recommendation,
    Main(usize),
    Interaction(usize, usize),
}

impl Term {
    fn value(&self, signals: &SignalVector, z: f64) -> f64 {
        match *self {
            Term::Recommendation => z,
            Term::Main(j) => signals.get(j) as u8 as f64,
            Term::Interaction(a, b) => (signals.get(a) && signals.get(b)) as u8 as f64,
        }
    }
}

/// One accepted greedy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub term: TermRecord,
    pub improvement: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub scoring: Scoring,
    /// Held-out score of the selected structure.
    pub heldout_score: f64,
    /// Held-out score of the `{z}`-only structure.
    pub baseline_score: f64,
    pub epsilon_main: f64,
    pub epsilon_int: f64,
    pub l2: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    /// Set when every outcome is identical and an intercept-only model was returned.
    pub degenerate: bool,
    #[serde(default)]
    pub steps: Vec<SelectionStep>,
}

/// A fitted regression for `π(y | signals, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    signal_names: Vec<String>,
    link: Link,
    intercept: f64,
    /// Recommendation first, then main effects, then interactions.
    terms: Vec<(Term, f64)>,
    fit: FitMetadata,
}

impl PosteriorModel {
    /// Builds a model from explicit coefficients. `terms` must start with the recommendation.
    pub fn from_parts(
        signal_names: Vec<String>,
        link: Link,
        intercept: f64,
        terms: Vec<(Term, f64)>,
        fit: FitMetadata,
    ) -> Result<Self> {
        let m = signal_names.len();
        if terms.first().map(|t| t.0) != Some(Term::Recommendation) {
            return Err(Error::contract("the recommendation term must come first"));
        }
        let mains: Vec<usize> = terms
            .iter()
            .filter_map(|(t, _)| match t {
                Term::Main(j) => Some(*j),
                _ => None,
            })
            .collect();
        for (t, w) in &terms {
            if !w.is_finite() {
                return Err(Error::contract("non-finite coefficient"));
            }
            match *t {
                Term::Main(j) if j >= m => return Err(Error::contract(format!("signal index {j} out of range"))),
                Term::Interaction(a, b) if a >= b || !mains.contains(&a) || !mains.contains(&b) => {
                    return Err(Error::contract(format!(
                        "interaction ({a}, {b}) must pair two selected main effects in ascending order"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            signal_names,
            link,
            intercept,
            terms,
            fit,
        })
    }

    pub fn signal_count(&self) -> usize {
        self.signal_names.len()
    }

    pub fn signal_names(&self) -> &[String] {
        &self.signal_names
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn terms(&self) -> &[(Term, f64)] {
        &self.terms
    }

    pub fn fit_metadata(&self) -> &FitMetadata {
        &self.fit
    }

    pub fn selected_main(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter_map(|(t, _)| match t {
                Term::Main(j) => Some(*j),
                _ => None,
            })
            .collect()
    }

    pub fn selected_interactions(&self) -> Vec<(usize, usize)> {
        self.terms
            .iter()
            .filter_map(|(t, _)| match t {
                Term::Interaction(a, b) => Some((*a, *b)),
                _ => None,
            })
            .collect()
    }

    /// Linear predictor before the link.
    pub fn linear(&self, signals: &SignalVector, z: f64) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|(t, w)| w * t.value(signals, z))
                .sum::<f64>()
    }

    /// Predicted `P(y = 1)`; the identity link is clamped into `[0, 1]`.
    pub fn probability(&self, signals: &SignalVector, z: f64) -> Result<f64> {
        if signals.len() != self.signal_count() {
            return Err(Error::contract(format!(
                "signal vector has length {}, model expects {}",
                signals.len(),
                self.signal_count()
            )));
        }
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::contract(format!("recommendation {z} outside [0, 1]")));
        }
        let eta = self.linear(signals, z);
        Ok(match self.link {
            Link::Logistic => glm::sigmoid(eta),
            Link::Identity => eta.clamp(0.0, 1.0),
        })
    }

    pub fn predict(&self, signals: &SignalVector, z: f64) -> Result<Posterior> {
        Posterior::binary(self.probability(signals, z)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &ModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::json("model", e))?;
        file.try_into()
    }
}

impl PosteriorEstimator for PosteriorModel {
    fn posterior(&self, signals: &SignalVector, z: f64) -> Result<Posterior> {
        self.predict(signals, z)
    }
}

/// Serialized form of a term, naming signals instead of indexing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermRecord {
    Recommendation,
    Main { signal: String },
    Interaction { signals: [String; 2] },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoefficientRecord {
    #[serde(flatten)]
    term: TermRecord,
    weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    signals: Vec<String>,
    link: Link,
    intercept: f64,
    coefficients: Vec<CoefficientRecord>,
    fit: FitMetadata,
}

fn term_record(names: &[String], t: Term) -> TermRecord {
    match t {
        Term::Recommendation => TermRecord::Recommendation,
        Term::Main(j) => TermRecord::Main {
            signal: names[j].clone(),
        },
        Term::Interaction(a, b) => TermRecord::Interaction {
            signals: [names[a].clone(), names[b].clone()],
        },
    }
}

impl From<&PosteriorModel> for ModelFile {
    fn from(m: &PosteriorModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            signals: m.signal_names.clone(),
            link: m.link,
            intercept: m.intercept,
            coefficients: m
                .terms
                .iter()
                .map(|&(t, weight)| CoefficientRecord {
                    term: term_record(&m.signal_names, t),
                    weight,
                })
                .collect(),
            fit: m.fit.clone(),
        }
    }
}

impl TryFrom<ModelFile> for PosteriorModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::contract(format!(
                "unsupported model format version {}",
                f.format_version
            )));
        }
        let idx = |name: &str| {
            f.signals
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::contract(format!("model references unknown signal {name:?}")))
        };
        let mut terms = Vec::with_capacity(f.coefficients.len());
        for c in &f.coefficients {
            let t = match &c.term {
                TermRecord::Recommendation => Term::Recommendation,
                TermRecord::Main { signal } => Term::Main(idx(signal)?),
                TermRecord::Interaction { signals } => Term::Interaction(idx(&signals[0])?, idx(&signals[1])?),
            };
            terms.push((t, c.weight));
        }
        PosteriorModel::from_parts(f.signals, f.link, f.intercept, terms, f.fit)
    }
}

/// Training data prepared once per fit: outcomes and the train/validation split.
struct Prepared<'a> {
    rows: &'a [SignalVector],
    z: Vec<f64>,
    y: Vec<f64>,
    train: Vec<usize>,
    validation: Vec<usize>,
    link: Link,
}

fn outcomes(dataset: &Dataset, problem: &DecisionProblem, link: Link) -> Result<Vec<f64>> {
    dataset
        .instances
        .iter()
        .map(|inst| match link {
            Link::Logistic => {
                if !problem.is_binary() {
                    return Err(Error::contract("logistic posterior requires a binary state space"));
                }
                Ok(problem.state_index(&inst.state)? as f64)
            }
            Link::Identity => inst
                .state
                .as_f64()
                .ok_or_else(|| Error::contract(format!("state {} is not numeric", inst.state))),
        })
        .collect()
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut validation = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    (train, validation)
}

impl<'a> Prepared<'a> {
    fn new(dataset: &'a Dataset, problem: &DecisionProblem, config: &FitConfig) -> Result<Self> {
        config.validate()?;
        if dataset.len() < 2 {
            return Err(Error::contract("posterior fitting needs at least two instances"));
        }
        let rows = dataset.occurrences()?;
        let link = config.link.unwrap_or(Link::Logistic);
        let y = outcomes(dataset, problem, link)?;
        let z = dataset.instances.iter().map(|i| i.recommendation).collect();
        let (train, validation) = split(dataset.len(), config.validation_fraction, config.seed);
        Ok(Self {
            rows,
            z,
            y,
            train,
            validation,
            link,
        })
    }

    fn features(&self, terms: &[Term], i: usize) -> Vec<f64> {
        terms.iter().map(|t| t.value(&self.rows[i], self.z[i])).collect()
    }

    fn fit_on(&self, terms: &[Term], idx: &[usize], l2: f64) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.features(terms, i)).collect();
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        Ok(glm::fit(self.link, &rows, &y, l2)?.coefficients)
    }

    fn predict(&self, terms: &[Term], coef: &[f64], i: usize) -> f64 {
        let eta = glm::linear_predictor(coef, &self.features(terms, i));
        match self.link {
            Link::Logistic => glm::sigmoid(eta),
            Link::Identity => eta,
        }
    }

    fn score(&self, terms: &[Term], coef: &[f64], scoring: Scoring) -> f64 {
        let n = self.validation.len() as f64;
        let total: f64 = self
            .validation
            .iter()
            .map(|&i| {
                let pred = self.predict(terms, coef, i);
                let y = self.y[i];
                match (scoring, self.link) {
                    (Scoring::LogLikelihood, Link::Logistic) => {
                        y * pred.ln() + (1.0 - y) * (1.0 - pred).ln()
                    }
                    (Scoring::LogLikelihood, Link::Identity) => -0.5 * (y - pred).powi(2),
                    (Scoring::Accuracy, _) => ((pred > 0.5) == (y > 0.5)) as u8 as f64,
                    (Scoring::Brier, Link::Logistic) => -(pred - y).powi(2),
                    (Scoring::Brier, Link::Identity) => -(pred.clamp(0.0, 1.0) - y).powi(2),
                }
            })
            .sum();
        total / n
    }

    /// Fits `terms` on the training split and scores the validation split.
    ///
    /// Terms are put in canonical order first, so a structure scores the same
    /// bits however it was reached.
    fn evaluate(&self, terms: &[Term], config: &FitConfig) -> Result<f64> {
        let mut terms = terms.to_vec();
        terms.sort_unstable();
        let coef = self.fit_on(&terms, &self.train, config.l2)?;
        Ok(self.score(&terms, &coef, config.scoring))
    }

    fn is_degenerate(&self) -> bool {
        let first = self.y[0];
        let all_same = self.y.iter().all(|&v| v == first);
        let train_same = self.train.iter().all(|&i| self.y[i] == self.y[self.train[0]]);
        all_same || (self.link == Link::Logistic && train_same)
    }
}

fn finish(
    dataset: &Dataset,
    prep: &Prepared<'_>,
    terms: Vec<Term>,
    config: &FitConfig,
    heldout_score: f64,
    baseline_score: f64,
    steps: Vec<SelectionStep>,
) -> Result<PosteriorModel> {
    let mut terms = terms;
    terms.sort_unstable();
    let all: Vec<usize> = (0..dataset.len()).collect();
    let coef = prep.fit_on(&terms, &all, config.l2)?;
    let names: Vec<String> = dataset.space.names().map(str::to_string).collect();
    let fit = FitMetadata {
        scoring: config.scoring,
        heldout_score,
        baseline_score,
        epsilon_main: config.epsilon_main,
        epsilon_int: config.epsilon_int,
        l2: config.l2,
        validation_fraction: config.validation_fraction,
        seed: config.seed,
        n_train: prep.train.len(),
        n_validation: prep.validation.len(),
        degenerate: false,
        steps,
    };
    PosteriorModel::from_parts(
        names,
        prep.link,
        coef[0],
        terms.into_iter().zip(coef[1..].iter().copied()).collect(),
        fit,
    )
}

fn degenerate_model(dataset: &Dataset, prep: &Prepared<'_>, config: &FitConfig) -> Result<PosteriorModel> {
    log::warn!("all outcomes identical; returning an intercept-only posterior");
    let n = prep.y.len() as f64;
    let mean = prep.y.iter().sum::<f64>() / n;
    let intercept = match prep.link {
        Link::Logistic => glm::logit((mean * n + 0.5) / (n + 1.0)),
        Link::Identity => mean,
    };
    let terms = [Term::Recommendation];
    let coef = [intercept, 0.0];
    let score = prep.score(&terms, &coef, config.scoring);
    let names: Vec<String> = dataset.space.names().map(str::to_string).collect();
    PosteriorModel::from_parts(
        names,
        prep.link,
        intercept,
        vec![(Term::Recommendation, 0.0)],
        FitMetadata {
            scoring: config.scoring,
            heldout_score: score,
            baseline_score: score,
            epsilon_main: config.epsilon_main,
            epsilon_int: config.epsilon_int,
            l2: config.l2,
            validation_fraction: config.validation_fraction,
            seed: config.seed,
            n_train: prep.train.len(),
            n_validation: prep.validation.len(),
            degenerate: true,
            steps: Vec::new(),
        },
    )
}

/// Picks the candidate with the best score; ties keep the earliest candidate.
fn best_candidate(scores: Vec<Result<f64>>) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for (k, s) in scores.into_iter().enumerate() {
        let s = s?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    Ok(best)
}

/// Greedy forward selection of main effects, then of pairwise interactions among them.
pub fn fit_greedy(dataset: &Dataset, problem: &DecisionProblem, config: &FitConfig) -> Result<PosteriorModel> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot fit a posterior on an empty dataset"));
    }
    let prep = Prepared::new(dataset, problem, config)?;
    if prep.is_degenerate() {
        return degenerate_model(dataset, &prep, config);
    }
    let names: Vec<String> = dataset.space.names().map(str::to_string).collect();
    let m = dataset.space.len();
    let mut terms = vec![Term::Recommendation];
    let baseline = prep.evaluate(&terms, config)?;
    let mut current = baseline;
    let mut steps = Vec::new();
    let mut mains: Vec<usize> = Vec::new();

    loop {
        let candidates: Vec<usize> = (0..m).filter(|j| !mains.contains(j)).collect();
        if candidates.is_empty() {
            break;
        }
        let scores = parallel_map(&candidates, config.workers, |_, &j| {
            let mut t = terms.clone();
            t.push(Term::Main(j));
            prep.evaluate(&t, config)
        });
        let Some((k, score)) = best_candidate(scores)? else { break };
        let improvement = score - current;
        if improvement <= config.epsilon_main {
            break;
        }
        let j = candidates[k];
        mains.push(j);
        terms.push(Term::Main(j));
        current = score;
        steps.push(SelectionStep {
            term: term_record(&names, Term::Main(j)),
            improvement,
            score,
        });
    }

    let mut pairs_sorted = mains.clone();
    pairs_sorted.sort_unstable();
    let all_pairs: Vec<(usize, usize)> = pairs_sorted
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| pairs_sorted[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    loop {
        let candidates: Vec<(usize, usize)> = all_pairs.iter().copied().filter(|p| !chosen.contains(p)).collect();
        if candidates.is_empty() {
            break;
        }
        let scores = parallel_map(&candidates, config.workers, |_, &(a, b)| {
            let mut t = terms.clone();
            t.push(Term::Interaction(a, b));
            prep.evaluate(&t, config)
        });
        let Some((k, score)) = best_candidate(scores)? else { break };
        let improvement = score - current;
        if improvement <= config.epsilon_int {
            break;
        }
        let (a, b) = candidates[k];
        chosen.push((a, b));
        terms.push(Term::Interaction(a, b));
        current = score;
        steps.push(SelectionStep {
            term: term_record(&names, Term::Interaction(a, b)),
            improvement,
            score,
        });
    }

    finish(dataset, &prep, terms, config, current, baseline, steps)
}

/// Scores every main-effect subset and every admissible interaction set; returns the best.
///
/// Intended as a test oracle for [`fit_greedy`]. Ties keep the first structure in
/// enumeration order (fewer and lower-indexed terms first).
pub fn exhaustive_select(
    dataset: &Dataset,
    problem: &DecisionProblem,
    config: &FitConfig,
    max_signals: usize,
) -> Result<PosteriorModel> {
    let m = dataset.space.len();
    if max_signals > 5 || m > max_signals {
        return Err(Error::Refused(format!(
            "exhaustive search over {m} signals exceeds the limit of {}",
            max_signals.min(5)
        )));
    }
    if dataset.is_empty() {
        return Err(Error::contract("cannot fit a posterior on an empty dataset"));
    }
    let prep = Prepared::new(dataset, problem, config)?;
    if prep.is_degenerate() {
        return degenerate_model(dataset, &prep, config);
    }
    let base_terms = vec![Term::Recommendation];
    let baseline = prep.evaluate(&base_terms, config)?;

    let mut structures: Vec<Vec<Term>> = Vec::new();
    for main_mask in 0u32..(1 << m) {
        let mains: Vec<usize> = (0..m).filter(|j| main_mask & (1 << j) != 0).collect();
        let pairs: Vec<(usize, usize)> = mains
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| mains[i + 1..].iter().map(move |&b| (a, b)))
            .collect();
        for pair_mask in 0u64..(1u64 << pairs.len()) {
            let mut terms = base_terms.clone();
            terms.extend(mains.iter().map(|&j| Term::Main(j)));
            terms.extend(
                pairs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| pair_mask & (1 << k) != 0)
                    .map(|(_, &(a, b))| Term::Interaction(a, b)),
            );
            structures.push(terms);
        }
    }
    let scores = parallel_map(&structures, config.workers, |_, t| prep.evaluate(t, config));
    let (k, score) = best_candidate(scores)?.expect("at least the z-only structure");
    finish(dataset, &prep, structures.swap_remove(k), config, score, baseline, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Instance, SignalSpace};
    use rand::Rng;

    fn meta() -> FitMetadata {
        FitMetadata {
            scoring: Scoring::LogLikelihood,
            heldout_score: 0.0,
            baseline_score: 0.0,
            epsilon_main: 0.0,
            epsilon_int: 0.0,
            l2: 0.0,
            validation_fraction: 0.2,
            seed: 0,
            n_train: 0,
            n_validation: 0,
            degenerate: false,
            steps: vec![],
        }
    }

    fn model(intercept: f64, zw: f64) -> PosteriorModel {
        PosteriorModel::from_parts(vec!["a".into()], Link::Logistic, intercept, vec![(Term::Recommendation, zw)], meta()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let z = SignalVector::zeros(1);
        let p = model(glm::logit(0.3), 0.0).predict(&z, 0.4).unwrap();
        assert!((p.probabilities()[1] - 0.3).abs() < 1e-12);
        assert_eq!(model(0.0, 0.0).predict(&z, 0.9).unwrap().probabilities()[1], 0.5);
        // Logistic link at η = 2 · 0.8.
        let expected = 1.0 / (1.0 + (-1.6f64).exp());
        let p = model(0.0, 2.0).predict(&z, 0.8).unwrap().probabilities()[1];
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.8320).abs() < 1e-4);
    }

    #[test]
    fn predict_rejects_bad_inputs() {
        let m = model(0.0, 1.0);
        assert!(m.predict(&SignalVector::zeros(2), 0.5).is_err());
        assert!(m.predict(&SignalVector::zeros(1), 1.5).is_err());
    }

    #[test]
    fn from_parts_enforces_structure() {
        let n = vec!["a".to_string(), "b".to_string()];
        assert!(PosteriorModel::from_parts(n.clone(), Link::Logistic, 0.0, vec![(Term::Main(0), 1.0)], meta()).is_err());
        assert!(PosteriorModel::from_parts(
            n.clone(),
            Link::Logistic,
            0.0,
            vec![(Term::Recommendation, 0.0), (Term::Main(0), 1.0), (Term::Interaction(0, 1), 1.0)],
            meta()
        )
        .is_err());
    }

    pub(crate) fn dataset<F>(n: usize, m: usize, seed: u64, label: F) -> Dataset
    where
        F: Fn(&[bool], f64, &mut ChaCha8Rng) -> bool,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = SignalSpace::from_names((0..m).map(|j| format!("s{}", j + 1))).unwrap();
        let mut instances = Vec::new();
        let mut rows = Vec::new();
        for i in 0..n {
            let bits: Vec<bool> = (0..m).map(|_| rng.random_bool(0.5)).collect();
            let z: f64 = rng.random();
            let y = label(&bits, z, &mut rng);
            instances.push(Instance::new(format!("{i}"), "", z, if y { "1" } else { "0" }));
            rows.push(SignalVector::from_bits(bits));
        }
        Dataset::new(instances, space, Some(rows)).unwrap()
    }

    #[test]
    fn independent_signals_select_only_the_recommendation() {
        let ds = dataset(1000, 4, 3, |_, _, rng| rng.random_bool(0.5));
        let cfg = FitConfig { epsilon_main: 0.01, ..Default::default() };
        let m = fit_greedy(&ds, &DecisionProblem::binary_accuracy(), &cfg).unwrap();
        assert!(m.selected_main().is_empty());
        assert!(m.selected_interactions().is_empty());
        assert_eq!(m.terms()[0].0, Term::Recommendation);
    }

    #[test]
    fn planted_and_selects_both_mains_and_their_interaction() {
        let ds = dataset(2000, 2, 5, |s, _, _| s[0] && s[1]);
        let cfg = FitConfig::default();
        let problem = DecisionProblem::binary_accuracy();
        let greedy = fit_greedy(&ds, &problem, &cfg).unwrap();
        let mut mains = greedy.selected_main();
        mains.sort_unstable();
        assert_eq!(mains, vec![0, 1]);
        assert_eq!(greedy.selected_interactions(), vec![(0, 1)]);
        let oracle = exhaustive_select(&ds, &problem, &cfg, 5).unwrap();
        assert!((oracle.fit_metadata().heldout_score - greedy.fit_metadata().heldout_score).abs() < 1e-6);
    }

    #[test]
    fn degenerate_outcomes_give_flagged_intercept_model() {
        let ds = dataset(50, 2, 1, |_, _, _| true);
        let m = fit_greedy(&ds, &DecisionProblem::binary_accuracy(), &FitConfig::default()).unwrap();
        assert!(m.fit_metadata().degenerate);
        let p = m.predict(&SignalVector::zeros(2), 0.1).unwrap().probabilities()[1];
        assert!(p > 0.9 && p < 1.0);
    }

    #[test]
    fn empty_and_tiny_datasets_are_rejected() {
        let space = SignalSpace::from_names(["a"]).unwrap();
        let empty = Dataset::new(vec![], space.clone(), Some(vec![])).unwrap();
        assert!(matches!(
            fit_greedy(&empty, &DecisionProblem::binary_accuracy(), &FitConfig::default()),
            Err(Error::Contract(_))
        ));
        let no_occ = Dataset::new(vec![Instance::new("a", "", 0.5, "1"), Instance::new("b", "", 0.5, "0")], space, None).unwrap();
        assert!(fit_greedy(&no_occ, &DecisionProblem::binary_accuracy(), &FitConfig::default()).is_err());
    }

    #[test]
    fn exhaustive_examples() {
        let problem = DecisionProblem::binary_accuracy();
        let cfg = FitConfig::default();
        let ds0 = dataset(200, 0, 2, |_, z, _| z > 0.5);
        let m0 = exhaustive_select(&ds0, &problem, &cfg, 5).unwrap();
        assert!(m0.selected_main().is_empty());
        let ds1 = dataset(200, 1, 2, |s, _, _| s[0]);
        assert_eq!(exhaustive_select(&ds1, &problem, &cfg, 5).unwrap().selected_main(), vec![0]);
        let ds6 = dataset(20, 6, 2, |s, _, _| s[0]);
        assert!(matches!(exhaustive_select(&ds6, &problem, &cfg, 5), Err(Error::Refused(_))));
        assert!(matches!(exhaustive_select(&ds1, &problem, &cfg, 6), Err(Error::Refused(_))));
    }

    #[test]
    fn refit_is_bit_identical_and_serialization_is_exact() {
        let ds = dataset(400, 3, 9, |s, z, rng| rng.random_bool(if s[0] { 0.8 } else { 0.3 * z }));
        let problem = DecisionProblem::binary_accuracy();
        let a = fit_greedy(&ds, &problem, &FitConfig::default()).unwrap();
        let b = fit_greedy(&ds, &problem, &FitConfig { workers: 1, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        let back = PosteriorModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn identity_link_fits_linear_probability() {
        let ds = dataset(500, 1, 4, |s, _, _| s[0]);
        let cfg = FitConfig { link: Some(Link::Identity), ..Default::default() };
        let m = fit_greedy(&ds, &DecisionProblem::binary_accuracy(), &cfg).unwrap();
        assert_eq!(m.link(), Link::Identity);
        let p1 = m.predict(&SignalVector::from_bits(vec![true]), 0.5).unwrap().probabilities()[1];
        assert!(p1 > 0.95);
    }
}
