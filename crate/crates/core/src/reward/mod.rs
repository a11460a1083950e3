//! Candidate rewards for policy fine-tuning and group-relative advantages.
//!
//! A candidate signal set earns 1 when both it and the instance's label are
//! empty, 0 when it names a signal that does not occur on the instance, and
//! otherwise its payoff improvement divided by the label's improvement `α`.

pub mod service;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SignalVector};
use crate::decision::{DecisionProblem, PayoffMode, PosteriorEstimator};
use crate::dgp::normalize_signal_name;
use crate::error::{Error, Result};
use crate::labeler::improvement;
use crate::posterior::PosteriorModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub instance_id: String,
    pub candidate: SignalVector,
    pub supported: bool,
    pub alpha: f64,
    pub improvement: f64,
    pub reward: f64,
}

/// Every signal in `candidate` occurs in `occ_row`.
pub fn supported(candidate: &SignalVector, occ_row: &SignalVector) -> Result<bool> {
    candidate.is_subset_of(occ_row)
}

/// Payoff improvement of the label, used to normalize rewards.
pub fn alpha<E: PosteriorEstimator + ?Sized>(
    instance: &crate::data::Instance,
    label: &SignalVector,
    model: &E,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<f64> {
    improvement(instance, label, model, problem, mode)
}

/// Reward of one candidate. With `α ≤ 0` a supported candidate earns 1 for any positive improvement and 0 otherwise.
#[allow(clippy::too_many_arguments)]
pub fn reward<E: PosteriorEstimator + ?Sized>(
    candidate: &SignalVector,
    instance: &crate::data::Instance,
    occ_row: &SignalVector,
    label: &SignalVector,
    model: &E,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<RewardRecord> {
    if label.len() != candidate.len() {
        return Err(Error::contract("candidate and label lengths differ"));
    }
    let is_supported = supported(candidate, occ_row)?;
    let a = alpha(instance, label, model, problem, mode)?;
    let gain = improvement(instance, candidate, model, problem, mode)?;
    let value = if !candidate.any() && !label.any() {
        1.0
    } else if !is_supported {
        0.0
    } else if a > 0.0 {
        gain / a
    } else if gain > 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RewardRecord {
        instance_id: instance.id.clone(),
        candidate: candidate.clone(),
        supported: is_supported,
        alpha: a,
        improvement: gain,
        reward: value,
    })
}

/// `R_j − mean(R)`.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::contract("advantages need at least one reward"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Everything needed to score candidates by instance id and signal names.
#[derive(Debug, Clone)]
pub struct RewardContext {
    dataset: Dataset,
    labels: Vec<SignalVector>,
    model: PosteriorModel,
    problem: DecisionProblem,
    mode: PayoffMode,
    index: HashMap<String, usize>,
}

impl RewardContext {
    pub fn new(
        dataset: Dataset,
        labels: Vec<SignalVector>,
        model: PosteriorModel,
        problem: DecisionProblem,
        mode: PayoffMode,
    ) -> Result<Self> {
        dataset.occurrences()?;
        crate::data::check_rows(&labels, dataset.len(), dataset.space.len())?;
        if !model.signal_names().iter().map(String::as_str).eq(dataset.space.names()) {
            return Err(Error::contract("model and dataset use different signal spaces"));
        }
        let index = dataset
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id.clone(), i))
            .collect();
        Ok(Self {
            dataset,
            labels,
            model,
            problem,
            mode,
            index,
        })
    }

    /// Builds the context with labels taken from supervised records keyed by instance id.
    pub fn from_sft(
        dataset: Dataset,
        records: &[crate::labeler::SftRecord],
        model: PosteriorModel,
        problem: DecisionProblem,
        mode: PayoffMode,
    ) -> Result<Self> {
        let by_id: HashMap<&str, &crate::labeler::SftRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let labels = dataset
            .instances
            .iter()
            .map(|inst| {
                let rec = by_id
                    .get(inst.id.as_str())
                    .ok_or_else(|| Error::contract(format!("no label for instance {}", inst.id)))?;
                dataset
                    .space
                    .vector_from_names(&rec.labels)
                    .map_err(|unknown| Error::contract(format!("label names outside the signal space: {unknown:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dataset, labels, model, problem, mode)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn labels(&self) -> &[SignalVector] {
        &self.labels
    }

    pub fn model(&self) -> &PosteriorModel {
        &self.model
    }

    pub fn mode(&self) -> PayoffMode {
        self.mode
    }

    pub fn position(&self, instance_id: &str) -> Option<usize> {
        self.index.get(instance_id).copied()
    }

    pub fn reward_vector(&self, i: usize, candidate: &SignalVector) -> Result<RewardRecord> {
        let occ = &self.dataset.occurrences()?[i];
        reward(
            candidate,
            &self.dataset.instances[i],
            occ,
            &self.labels[i],
            &self.model,
            &self.problem,
            self.mode,
        )
    }

    /// Scores named signals. Names are normalized first; any name outside the
    /// space makes the candidate unsupported with reward 0 and improvement 0.
    pub fn reward_names<S: AsRef<str>>(&self, instance_id: &str, names: &[S]) -> Result<RewardRecord> {
        let i = self
            .position(instance_id)
            .ok_or_else(|| Error::contract(format!("unknown instance {instance_id:?}")))?;
        match self.dataset.space.vector_from_names(names) {
            Ok(candidate) => self.reward_vector(i, &candidate),
            Err(_) => {
                let inst = &self.dataset.instances[i];
                let m = self.dataset.space.len();
                let mut known = SignalVector::zeros(m);
                for n in names {
                    if let Some(j) = normalize_signal_name(n.as_ref()).and_then(|c| self.dataset.space.index_of(&c)) {
                        known.set(j, true);
                    }
                }
                Ok(RewardRecord {
                    instance_id: inst.id.clone(),
                    candidate: known,
                    supported: false,
                    alpha: alpha(inst, &self.labels[i], &self.model, &self.problem, self.mode)?,
                    improvement: 0.0,
                    reward: 0.0,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::tabular::{Conditioning, EmpiricalJoint};
    use proptest::prelude::*;

    fn joint() -> EmpiricalJoint {
        let recs: Vec<_> = [(true, 1), (false, 0), (true, 1), (false, 0)]
            .iter()
            .map(|&(s, y)| (SignalVector::from_bits(vec![s, false]), 0.5, y))
            .collect();
        EmpiricalJoint::from_records(2, 2, &recs).unwrap()
    }

    #[test]
    fn support_examples() {
        let occ = SignalVector::from_bits(vec![true, false]);
        assert!(supported(&SignalVector::zeros(2), &occ).unwrap());
        assert!(supported(&occ, &occ).unwrap());
        assert!(!supported(&SignalVector::from_bits(vec![false, true]), &occ).unwrap());
        assert!(supported(&SignalVector::zeros(3), &occ).is_err());
    }

    #[test]
    fn alpha_examples() {
        let j = joint();
        let est = j.estimator(Conditioning::all(2));
        let inst = Instance::new("a", "", 0.5, "1");
        let p = DecisionProblem::binary_accuracy();
        assert_eq!(alpha(&inst, &SignalVector::zeros(2), &est, &p, PayoffMode::Realized).unwrap(), 0.0);
        assert_eq!(alpha(&inst, &SignalVector::from_indices(2, &[0]), &est, &p, PayoffMode::Realized).unwrap(), 1.0);
        let z_only = j.estimator(Conditioning::z_only());
        assert_eq!(alpha(&inst, &SignalVector::from_indices(2, &[0]), &z_only, &p, PayoffMode::Expected).unwrap(), 0.0);
    }

    #[test]
    fn reward_cases() {
        let j = joint();
        let est = j.estimator(Conditioning::all(2));
        let inst = Instance::new("a", "", 0.5, "1");
        let p = DecisionProblem::binary_accuracy();
        let occ = SignalVector::from_bits(vec![true, false]);
        let label = SignalVector::from_indices(2, &[0]);
        let empty = SignalVector::zeros(2);
        let r = |c: &SignalVector, l: &SignalVector| reward(c, &inst, &occ, l, &est, &p, PayoffMode::Realized).unwrap();
        assert_eq!(r(&empty, &empty).reward, 1.0);
        let unsupported = r(&SignalVector::from_indices(2, &[1]), &label);
        assert!(!unsupported.supported);
        assert_eq!(unsupported.reward, 0.0);
        assert_eq!(r(&label, &label).reward, 1.0);
        assert_eq!(r(&empty, &label).reward, 0.0);
        // α = 0 with an improving candidate.
        assert_eq!(r(&label, &empty).reward, 1.0);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantages(&[1.0, 0.0, 0.5, 0.5]).unwrap(), vec![0.5, -0.5, 0.0, 0.0]);
        assert_eq!(advantages(&[0.3; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(advantages(&[0.7]).unwrap(), vec![0.0]);
        assert!(advantages(&[]).is_err());
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(rewards in prop::collection::vec(-5.0f64..5.0, 1..=16)) {
            let a = advantages(&rewards).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
