//! Decision problems, posteriors and best-attainable payoff.
//!
//! The value of information here is always measured through a decision: a
//! posterior over states induces the decision that maximizes expected
//! utility, and the payoff of that decision is either averaged over the
//! posterior ([`PayoffMode::Expected`]) or read off at the realized state
//! ([`PayoffMode::Realized`]).

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SignalVector, StateLabel};
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// States, decisions and the utility table `utility[d][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct DecisionProblem {
    states: Vec<StateLabel>,
    decisions: Vec<String>,
    utility: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawProblem {
    states: Vec<StateLabel>,
    decisions: Vec<String>,
    utility: Vec<Vec<f64>>,
}

impl TryFrom<RawProblem> for DecisionProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        DecisionProblem::new(raw.states, raw.decisions, raw.utility)
    }
}

impl From<DecisionProblem> for RawProblem {
    fn from(p: DecisionProblem) -> Self {
        RawProblem {
            states: p.states,
            decisions: p.decisions,
            utility: p.utility,
        }
    }
}

impl DecisionProblem {
    pub fn new(states: Vec<StateLabel>, decisions: Vec<String>, utility: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() || decisions.is_empty() {
            return Err(Error::contract("decision problem needs at least one state and one decision"));
        }
        if utility.len() != decisions.len() || utility.iter().any(|row| row.len() != states.len()) {
            return Err(Error::contract(format!(
                "utility table must be {} x {}",
                decisions.len(),
                states.len()
            )));
        }
        if utility.iter().flatten().any(|u| !u.is_finite()) {
            return Err(Error::contract("utility entries must be finite"));
        }
        for (i, s) in states.iter().enumerate() {
            if states[..i].contains(s) {
                return Err(Error::contract(format!("duplicate state label {s}")));
            }
        }
        Ok(Self {
            states,
            decisions,
            utility,
        })
    }

    /// Binary accuracy: states and decisions `{0, 1}`, `U(d, y) = 1[d = y]`.
    pub fn binary_accuracy() -> Self {
        Self::binary(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).expect("static table")
    }

    /// States and decisions `{0, 1}` with a caller-supplied `utility[d][y]`.
    pub fn binary(utility: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            vec!["0".into(), "1".into()],
            vec!["0".into(), "1".into()],
            utility,
        )
    }

    pub fn states(&self) -> &[StateLabel] {
        &self.states
    }

    pub fn decisions(&self) -> &[String] {
        &self.decisions
    }

    pub fn utility(&self, d: usize, y: usize) -> f64 {
        self.utility[d][y]
    }

    pub fn is_binary(&self) -> bool {
        self.states.len() == 2
    }

    pub fn state_index(&self, y: &StateLabel) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == y)
            .ok_or_else(|| Error::contract(format!("unknown state label {y}")))
    }

    /// Smallest and largest utility entries.
    pub fn utility_range(&self) -> (f64, f64) {
        self.utility
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &u| (lo.min(u), hi.max(u)))
    }

    /// Same states and decisions with `U` replaced by `a·U + b`.
    pub fn affine(&self, a: f64, b: f64) -> Result<Self> {
        let utility = self
            .utility
            .iter()
            .map(|row| row.iter().map(|u| a * u + b).collect())
            .collect();
        Self::new(self.states.clone(), self.decisions.clone(), utility)
    }
}

impl Default for DecisionProblem {
    fn default() -> Self {
        Self::binary_accuracy()
    }
}

/// A distribution over the states of a decision problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::contract("posterior over zero states"));
        }
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::contract(format!(
                "posterior entries must lie in [0, 1]: {probabilities:?}"
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::contract(format!("posterior sums to {total}")));
        }
        Ok(Self(probabilities))
    }

    /// `(1 − p, p)` over binary states.
    pub fn binary(p: f64) -> Result<Self> {
        Self::new(vec![1.0 - p, p])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, problem: &DecisionProblem) -> Result<()> {
        if self.0.len() != problem.states.len() {
            return Err(Error::contract(format!(
                "posterior has {} entries, problem has {} states",
                self.0.len(),
                problem.states.len()
            )));
        }
        Ok(())
    }
}

/// Which best-attainable payoff a computation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayoffMode {
    /// `max_d E_{y~π}[U(d, y)]`.
    Expected,
    /// `U(d*, y)` at the realized state, with `d*` the best response to `π`.
    #[default]
    Realized,
}

impl std::str::FromStr for PayoffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expected" => Ok(Self::Expected),
            "realized" => Ok(Self::Realized),
            other => Err(Error::contract(format!("unknown payoff mode {other:?}"))),
        }
    }
}

fn expected_utility(posterior: &Posterior, problem: &DecisionProblem, d: usize) -> f64 {
    posterior
        .0
        .iter()
        .zip(&problem.utility[d])
        .map(|(p, u)| p * u)
        .sum()
}

/// Index of the decision maximizing expected utility. Ties go to the lowest index.
pub fn best_response(posterior: &Posterior, problem: &DecisionProblem) -> Result<usize> {
    posterior.check(problem)?;
    let mut best = 0;
    let mut best_value = expected_utility(posterior, problem, 0);
    for d in 1..problem.decisions.len() {
        let value = expected_utility(posterior, problem, d);
        if value > best_value {
            best = d;
            best_value = value;
        }
    }
    Ok(best)
}

pub fn expected_best_payoff(posterior: &Posterior, problem: &DecisionProblem) -> Result<f64> {
    let d = best_response(posterior, problem)?;
    Ok(expected_utility(posterior, problem, d))
}

/// Utility of the best response evaluated at realized state index `y`.
pub fn realized_best_payoff(posterior: &Posterior, problem: &DecisionProblem, y: usize) -> Result<f64> {
    if y >= problem.states.len() {
        return Err(Error::contract(format!("state index {y} out of range")));
    }
    let d = best_response(posterior, problem)?;
    Ok(problem.utility[d][y])
}

/// Best-attainable payoff under `mode`; `y` is only read in realized mode.
pub fn best_payoff(posterior: &Posterior, problem: &DecisionProblem, y: usize, mode: PayoffMode) -> Result<f64> {
    match mode {
        PayoffMode::Expected => expected_best_payoff(posterior, problem),
        PayoffMode::Realized => realized_best_payoff(posterior, problem, y),
    }
}

/// Anything that maps `(signals, z)` to a posterior over states.
pub trait PosteriorEstimator {
    fn posterior(&self, signals: &SignalVector, z: f64) -> Result<Posterior>;
}

impl<T: PosteriorEstimator + ?Sized> PosteriorEstimator for &T {
    fn posterior(&self, signals: &SignalVector, z: f64) -> Result<Posterior> {
        (**self).posterior(signals, z)
    }
}

/// Per-instance `Û(π(y | s_i, z_i)) − Û(π(y | z_i))`.
///
/// `model_with` receives the extracted vector; `model_without` receives an
/// all-zero vector of the same length and is expected to ignore it.
pub fn payoff_differences<W, O>(
    dataset: &Dataset,
    extracted: &[SignalVector],
    model_with: &W,
    model_without: &O,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<Vec<f64>>
where
    W: PosteriorEstimator + ?Sized,
    O: PosteriorEstimator + ?Sized,
{
    if extracted.len() != dataset.instances.len() {
        return Err(Error::contract(format!(
            "{} extracted vectors for {} instances",
            extracted.len(),
            dataset.instances.len()
        )));
    }
    dataset
        .instances
        .iter()
        .zip(extracted)
        .map(|(inst, s)| {
            let y = problem.state_index(&inst.state)?;
            let with = model_with.posterior(s, inst.recommendation)?;
            let without = model_without.posterior(&SignalVector::zeros(s.len()), inst.recommendation)?;
            Ok(best_payoff(&with, problem, y, mode)? - best_payoff(&without, problem, y, mode)?)
        })
        .collect()
}

/// Mean of [`payoff_differences`]; zero for an empty dataset.
pub fn complementary_value<W, O>(
    dataset: &Dataset,
    extracted: &[SignalVector],
    model_with: &W,
    model_without: &O,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<f64>
where
    W: PosteriorEstimator + ?Sized,
    O: PosteriorEstimator + ?Sized,
{
    let diffs = payoff_differences(dataset, extracted, model_with, model_without, problem, mode)?;
    if diffs.is_empty() {
        return Ok(0.0);
    }
    Ok(diffs.iter().sum::<f64>() / diffs.len() as f64)
}
