//! Per-instance complementary labels and the supervised fine-tuning dataset.
//!
//! A label is a subset of the signals that occur on an instance whose joint
//! addition to the recommendation raises the best-attainable payoff by more
//! than `epsilon`. Candidates are the occurring signals that clear the
//! margin on their own; their union is returned when it clears the margin as
//! a set, and otherwise a set is grown greedily from the best single
//! candidate, keeping only additions that preserve the margin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, write_jsonl, Dataset, Instance, SignalSpace, SignalVector};
use crate::decision::{best_payoff, DecisionProblem, PayoffMode, PosteriorEstimator};
use crate::dgp::prompts::{self, PromptTemplates};
use crate::dgp::ChatClient;
use crate::error::{Error, Result};
use crate::pool::parallel_map;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub epsilon: f64,
    pub mode: PayoffMode,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            mode: PayoffMode::Realized,
        }
    }
}

/// `Û(π(y | signals, z))` for one instance.
pub fn instance_payoff<E: PosteriorEstimator + ?Sized>(
    instance: &Instance,
    signals: &SignalVector,
    model: &E,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<f64> {
    let y = problem.state_index(&instance.state)?;
    let posterior = model.posterior(signals, instance.recommendation)?;
    best_payoff(&posterior, problem, y, mode)
}

/// Payoff gain of `signals` over the recommendation alone.
pub fn improvement<E: PosteriorEstimator + ?Sized>(
    instance: &Instance,
    signals: &SignalVector,
    model: &E,
    problem: &DecisionProblem,
    mode: PayoffMode,
) -> Result<f64> {
    let base = instance_payoff(instance, &SignalVector::zeros(signals.len()), model, problem, mode)?;
    Ok(instance_payoff(instance, signals, model, problem, mode)? - base)
}

/// The complementary label of one instance.
pub fn label_complementary<E: PosteriorEstimator + ?Sized>(
    instance: &Instance,
    occ_row: &SignalVector,
    model: &E,
    problem: &DecisionProblem,
    config: &LabelConfig,
) -> Result<SignalVector> {
    let m = occ_row.len();
    let payoff = |s: &SignalVector| instance_payoff(instance, s, model, problem, config.mode);
    let base = payoff(&SignalVector::zeros(m))?;
    let clears = |v: f64| v > base + config.epsilon;

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for j in occ_row.ones() {
        let v = payoff(&SignalVector::from_indices(m, &[j]))?;
        if clears(v) {
            candidates.push((j, v));
        }
    }
    if candidates.is_empty() {
        return Ok(SignalVector::zeros(m));
    }
    let union = SignalVector::from_indices(m, &candidates.iter().map(|c| c.0).collect::<Vec<_>>());
    if clears(payoff(&union)?) {
        return Ok(union);
    }

    // Strict `>` keeps the lowest index among equal payoffs.
    let (first, mut current) = candidates
        .iter()
        .copied()
        .fold(None, |best: Option<(usize, f64)>, c| match best {
            Some(b) if b.1 >= c.1 => Some(b),
            _ => Some(c),
        })
        .expect("non-empty candidates");
    let mut chosen = SignalVector::from_indices(m, &[first]);
    let mut remaining: Vec<usize> = candidates.iter().map(|c| c.0).filter(|&j| j != first).collect();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for &j in &remaining {
            let v = payoff(&chosen.with(j))?;
            if clears(v) && v >= current && best.is_none_or(|b| v > b.1) {
                best = Some((j, v));
            }
        }
        let Some((j, v)) = best else { break };
        chosen.set(j, true);
        current = v;
        remaining.retain(|&r| r != j);
    }
    Ok(chosen)
}

/// Labels every instance of `dataset`, in order.
pub fn label_dataset<E: PosteriorEstimator + Sync + ?Sized>(
    dataset: &Dataset,
    model: &E,
    problem: &DecisionProblem,
    config: &LabelConfig,
    workers: usize,
) -> Result<Vec<SignalVector>> {
    let occ = dataset.occurrences()?;
    parallel_map(&dataset.instances, workers, |i, inst| {
        label_complementary(inst, &occ[i], model, problem, config)
    })
    .into_iter()
    .collect()
}

/// A reasoning trace and whether it came from the fallback template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub text: String,
    pub fallback: bool,
}

/// True when every section required for the label kind appears (case-insensitive).
pub fn trace_has_sections(text: &str, labels_empty: bool) -> bool {
    let upper = text.to_uppercase();
    if labels_empty {
        prompts::EMPTY_TRACE_SECTIONS.iter().all(|s| upper.contains(s))
    } else {
        prompts::TRACE_SECTIONS.iter().all(|s| upper.contains(s))
    }
}

/// Trace used when the client never produced the required sections.
pub fn fallback_trace(labels: &[(String, String)], recommendation: f64) -> String {
    if labels.is_empty() {
        return format!(
            "<thinking>\nWHY NO COMPLEMENTARY SIGNALS\nNo stated finding adds information beyond the recommendation.\n\nMODEL PREDICTION\nThe recommendation ({recommendation}) already accounts for the document.\n</thinking>"
        );
    }
    let names: Vec<&str> = labels.iter().map(|l| l.0.as_str()).collect();
    format!(
        "<thinking>\nEVIDENCE FROM REPORT\nThe document states: {}.\n\nCLINICAL RELEVANCE\nThese findings bear on the outcome.\n\nCOMPLEMENTARY VALUE\nThe recommendation ({recommendation}) does not reflect them.\n</thinking>",
        names.join(", ")
    )
}

pub const TRACE_ATTEMPTS: u32 = 3;

/// Samples a trace, retrying up to three times when sections are missing.
pub fn generate_cot<C: ChatClient + ?Sized>(
    instance: &Instance,
    labels: &[(String, String)],
    client: &C,
    templates: &PromptTemplates,
    temperature: f64,
) -> Result<Trace> {
    let prompt = templates.trace(&instance.text, instance.recommendation, labels);
    for attempt in 0..TRACE_ATTEMPTS {
        let text = client.complete(&prompt, temperature, attempt)?;
        if trace_has_sections(&text, labels.is_empty()) {
            return Ok(Trace { text, fallback: false });
        }
        log::warn!("instance {}: trace attempt {} lacks required sections", instance.id, attempt + 1);
    }
    Ok(Trace {
        text: fallback_trace(labels, instance.recommendation),
        fallback: true,
    })
}

/// One line of the supervised fine-tuning file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub id: String,
    /// Extraction prompt rendered with the instance text and recommendation.
    pub prompt: String,
    pub trace: String,
    /// Canonical names of the labeled signals, in signal-index order.
    pub labels: Vec<String>,
    pub label_vector: SignalVector,
    /// `trace` followed by the `[[ signals ]]` block.
    pub completion: String,
    pub trace_fallback: bool,
}

pub fn sft_record(
    instance: &Instance,
    space: &SignalSpace,
    label: &SignalVector,
    trace: &Trace,
    templates: &PromptTemplates,
    k: usize,
) -> SftRecord {
    let labels = space.names_of(label);
    SftRecord {
        id: instance.id.clone(),
        prompt: templates.extraction(&instance.text, instance.recommendation, k),
        completion: format!("{}\n\n{}", trace.text, prompts::signal_block(&labels)),
        trace: trace.text.clone(),
        labels,
        label_vector: label.clone(),
        trace_fallback: trace.fallback,
    }
}

/// Label names paired with their descriptions.
pub fn described_labels(space: &SignalSpace, label: &SignalVector) -> Vec<(String, String)> {
    label
        .ones()
        .map(|j| (space.name(j).to_string(), space.signals()[j].description.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftSummary {
    pub records: usize,
    pub empty_label_fraction: f64,
    pub fallback_traces: usize,
}

pub fn summarize(records: &[SftRecord]) -> SftSummary {
    let empty = records.iter().filter(|r| r.labels.is_empty()).count();
    SftSummary {
        records: records.len(),
        empty_label_fraction: if records.is_empty() { 0.0 } else { empty as f64 / records.len() as f64 },
        fallback_traces: records.iter().filter(|r| r.trace_fallback).count(),
    }
}

pub fn emit_sft_dataset(path: &Path, records: &[SftRecord]) -> Result<SftSummary> {
    write_jsonl(path, records).map_err(|e| Error::Pipeline(format!("writing {}: {e}", path.display())))?;
    Ok(summarize(records))
}

pub fn read_sft(path: &Path) -> Result<Vec<SftRecord>> {
    read_jsonl(path)
}
