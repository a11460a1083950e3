//! Exact empirical conditionals over a small discrete joint of `(signals, z, y)`.
//!
//! Used as a reference posterior: conditioning on any subset of the signals
//! (with or without `z`) is a plain count over matching cells, so payoffs
//! computed from it need no regression.

use std::collections::BTreeMap;

use crate::data::SignalVector;
use crate::decision::{DecisionProblem, Posterior, PosteriorEstimator};
use crate::error::{Error, Result};

/// Which coordinates a conditional looks at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conditioning {
    pub signals: Vec<usize>,
    pub z: bool,
}

impl Conditioning {
    pub fn all(m: usize) -> Self {
        Self {
            signals: (0..m).collect(),
            z: true,
        }
    }

    pub fn z_only() -> Self {
        Self {
            signals: Vec::new(),
            z: true,
        }
    }
}

#[derive(Debug, Clone)]
struct Cell {
    signals: SignalVector,
    z: f64,
    weights: Vec<f64>,
}

/// Weighted counts of `(signals, z, y)`; `y` is a state index.
#[derive(Debug, Clone)]
pub struct EmpiricalJoint {
    m: usize,
    n_states: usize,
    cells: Vec<Cell>,
    total: f64,
}

type Key = (Vec<bool>, Option<u64>);

impl EmpiricalJoint {
    pub fn new(m: usize, n_states: usize) -> Self {
        Self {
            m,
            n_states,
            cells: Vec::new(),
            total: 0.0,
        }
    }

    /// Builds a joint with unit weight per record.
    pub fn from_records(m: usize, n_states: usize, records: &[(SignalVector, f64, usize)]) -> Result<Self> {
        let mut joint = Self::new(m, n_states);
        for (s, z, y) in records {
            joint.add(s.clone(), *z, *y, 1.0)?;
        }
        Ok(joint)
    }

    pub fn add(&mut self, signals: SignalVector, z: f64, y: usize, weight: f64) -> Result<()> {
        if signals.len() != self.m || y >= self.n_states || weight < 0.0 {
            return Err(Error::contract("record does not fit the joint's dimensions"));
        }
        match self
            .cells
            .iter_mut()
            .find(|c| c.signals == signals && c.z.to_bits() == z.to_bits())
        {
            Some(cell) => cell.weights[y] += weight,
            None => {
                let mut weights = vec![0.0; self.n_states];
                weights[y] = weight;
                self.cells.push(Cell { signals, z, weights });
            }
        }
        self.total += weight;
        Ok(())
    }

    pub fn signal_count(&self) -> usize {
        self.m
    }

    fn key(&self, signals: &SignalVector, z: f64, cond: &Conditioning) -> Key {
        (
            cond.signals.iter().map(|&j| signals.get(j)).collect(),
            cond.z.then(|| z.to_bits()),
        )
    }

    fn grouped(&self, cond: &Conditioning) -> BTreeMap<Key, Vec<f64>> {
        let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for cell in &self.cells {
            let entry = groups
                .entry(self.key(&cell.signals, cell.z, cond))
                .or_insert_with(|| vec![0.0; self.n_states]);
            for (acc, w) in entry.iter_mut().zip(&cell.weights) {
                *acc += w;
            }
        }
        groups
    }

    fn marginal(&self) -> Result<Posterior> {
        if self.total <= 0.0 {
            return Err(Error::contract("empty joint"));
        }
        let mut w = vec![0.0; self.n_states];
        for cell in &self.cells {
            for (acc, x) in w.iter_mut().zip(&cell.weights) {
                *acc += x;
            }
        }
        normalize(w)
    }

    /// `π(y | signals restricted to cond, z if cond.z)`; unseen cells fall back to the marginal of `y`.
    pub fn conditional(&self, signals: &SignalVector, z: f64, cond: &Conditioning) -> Result<Posterior> {
        if signals.len() != self.m {
            return Err(Error::contract("signal vector length mismatch"));
        }
        let key = self.key(signals, z, cond);
        let mut w = vec![0.0; self.n_states];
        let mut seen = false;
        for cell in &self.cells {
            if self.key(&cell.signals, cell.z, cond) == key {
                seen = true;
                for (acc, x) in w.iter_mut().zip(&cell.weights) {
                    *acc += x;
                }
            }
        }
        if !seen || w.iter().sum::<f64>() <= 0.0 {
            return self.marginal();
        }
        normalize(w)
    }

    /// Expected best-attainable payoff averaged over the joint when conditioning on `cond`:
    /// `Σ_c max_d Σ_y P(c, y) U(d, y)`.
    pub fn value(&self, cond: &Conditioning, problem: &DecisionProblem) -> Result<f64> {
        if problem.states().len() != self.n_states {
            return Err(Error::contract("problem state count differs from the joint"));
        }
        if self.total <= 0.0 {
            return Err(Error::contract("empty joint"));
        }
        let mut value = 0.0;
        for weights in self.grouped(cond).values() {
            let best = (0..problem.decisions().len())
                .map(|d| {
                    weights
                        .iter()
                        .enumerate()
                        .map(|(y, w)| w * problem.utility(d, y))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            value += best;
        }
        Ok(value / self.total)
    }

    /// A posterior estimator that conditions on `cond`.
    pub fn estimator(&self, cond: Conditioning) -> TabularPosterior<'_> {
        TabularPosterior { joint: self, cond }
    }
}

fn normalize(w: Vec<f64>) -> Result<Posterior> {
    let total: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
    // Push rounding residue into the largest entry so the sum is exact.
    let residue = 1.0 - p.iter().sum::<f64>();
    if let Some(max) = p.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max = (*max + residue).clamp(0.0, 1.0);
    }
    Posterior::new(p)
}

/// [`EmpiricalJoint`] viewed through a fixed conditioning set.
#[derive(Debug, Clone)]
pub struct TabularPosterior<'a> {
    joint: &'a EmpiricalJoint,
    cond: Conditioning,
}

impl PosteriorEstimator for TabularPosterior<'_> {
    fn posterior(&self, signals: &SignalVector, z: f64) -> Result<Posterior> {
        self.joint.conditional(signals, z, &self.cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{best_payoff, PayoffMode};

    fn y_equals_s1() -> EmpiricalJoint {
        let recs: Vec<_> = [(true, 1), (false, 0), (true, 1), (false, 0)]
            .iter()
            .map(|&(s, y)| (SignalVector::from_bits(vec![s]), 0.5, y))
            .collect();
        EmpiricalJoint::from_records(1, 2, &recs).unwrap()
    }

    #[test]
    fn conditioning_on_the_signal_reveals_the_state() {
        let joint = y_equals_s1();
        let acc = DecisionProblem::binary_accuracy();
        assert_eq!(joint.value(&Conditioning::all(1), &acc).unwrap(), 1.0);
        assert_eq!(joint.value(&Conditioning::z_only(), &acc).unwrap(), 0.5);
    }

    #[test]
    fn conditional_matches_hand_count() {
        let joint = y_equals_s1();
        let p = joint
            .conditional(&SignalVector::from_bits(vec![true]), 0.5, &Conditioning::all(1))
            .unwrap();
        assert_eq!(p.probabilities(), &[0.0, 1.0]);
        let q = joint
            .estimator(Conditioning::z_only())
            .posterior(&SignalVector::from_bits(vec![true]), 0.5)
            .unwrap();
        assert_eq!(q.probabilities(), &[0.5, 0.5]);
        assert_eq!(best_payoff(&q, &DecisionProblem::binary_accuracy(), 0, PayoffMode::Realized).unwrap(), 1.0);
    }

    #[test]
    fn unseen_cell_falls_back_to_marginal() {
        let joint = y_equals_s1();
        let p = joint
            .conditional(&SignalVector::from_bits(vec![true]), 0.9, &Conditioning::all(1))
            .unwrap();
        assert_eq!(p.probabilities(), &[0.5, 0.5]);
    }
}
