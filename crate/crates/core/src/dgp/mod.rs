//! Two-round estimation of the signal space and per-instance occurrences.
//!
//! Round one asks the client, `zeta` times per instance, to list findings in
//! the text. Names are normalized, counted across every sample, and kept when
//! their total count exceeds `N_τ · zeta`. Round two asks, `zeta` times per
//! instance and kept signal, whether the signal occurs; a bit is set when
//! strictly more than half the answers say yes.

pub mod client;
pub mod mock;
pub mod prompts;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{read_json, write_json, Dataset, Instance, SignalDef, SignalSpace, SignalVector};
use crate::decision::DecisionProblem;
use crate::error::{Error, Result};
use crate::pool::parallel_map;

pub use client::{CachedClient, ChatClient, FnClient, OpenAiClient, RetryClient};
pub use mock::MockClient;
pub use prompts::PromptTemplates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub zeta: u32,
    pub temperature: f64,
    pub max_signals_per_prompt: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Maximum in-flight client requests.
    pub concurrency: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            zeta: 7,
            temperature: 0.7,
            max_signals_per_prompt: 20,
            epsilon: 0.1,
            delta: 0.05,
            concurrency: 8,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zeta < 1 {
            return Err(Error::contract("zeta must be at least 1"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::contract("temperature must be non-negative"));
        }
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::contract(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.max_signals_per_prompt == 0 {
            return Err(Error::contract("max_signals_per_prompt must be positive"));
        }
        Ok(())
    }
}

/// Minimum support `z²_{1−δ/2} · p(1−p) / ε²` for estimating a rate within `ε` at confidence `1 − δ`.
pub fn sample_size_threshold(epsilon: f64, delta: f64, prior: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) || !(0.0..=1.0).contains(&prior) {
        return Err(Error::contract(format!(
            "threshold arguments out of range: epsilon={epsilon}, delta={delta}, prior={prior}"
        )));
    }
    let z = Normal::standard().inverse_cdf(1.0 - delta / 2.0);
    Ok(z * z * prior * (1.0 - prior) / (epsilon * epsilon))
}

/// Lowercases, trims, and collapses every run of non-alphanumeric characters into one `_`.
/// Returns `None` when nothing alphanumeric remains.
pub fn normalize_signal_name(raw: &str) -> Option<String> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch);
        } else {
            pending_sep = true;
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Parses the first JSON list in a completion, preferring the text after a `[[ signals ]]` marker.
/// Items may be objects with a `name` field or bare strings. Returns `None` when no list parses.
pub fn parse_signal_list(text: &str) -> Option<Vec<String>> {
    let body = text
        .find(prompts::SIGNALS)
        .map(|i| &text[i + prompts::SIGNALS.len()..])
        .unwrap_or(text);
    for (i, _) in body.match_indices('[') {
        if body[i..].starts_with("[[") {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&body[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Array(items))) = stream.next() {
            let names = items
                .iter()
                .filter_map(|v| match v {
                    serde_json::Value::String(s) => Some(s.clone()),
                    serde_json::Value::Object(o) => o.get("name").and_then(|n| n.as_str()).map(str::to_string),
                    _ => None,
                })
                .collect();
            return Some(names);
        }
    }
    None
}

/// Reads a yes/no answer from the first word of a completion.
pub fn parse_yes_no(text: &str) -> Option<bool> {
    let word: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match word.as_str() {
        "yes" | "true" | "present" => Some(true),
        "no" | "false" | "absent" => Some(false),
        _ => None,
    }
}

/// Strict majority of `zeta` votes.
pub fn majority(yes_votes: u32, zeta: u32) -> bool {
    2 * yes_votes > zeta
}

/// Fraction of instances in the second state of a binary problem; 0.5 otherwise.
pub fn empirical_prior(instances: &[Instance], problem: &DecisionProblem) -> Result<f64> {
    if !problem.is_binary() || instances.is_empty() {
        return Ok(0.5);
    }
    let mut ones = 0usize;
    for inst in instances {
        ones += problem.state_index(&inst.state)?;
    }
    Ok(ones as f64 / instances.len() as f64)
}

/// Result of the first round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub space: SignalSpace,
    /// Total mentions per canonical name across all samples, kept or not.
    pub counts: BTreeMap<String, u64>,
    pub prior: f64,
    /// `N_τ · zeta`; kept names have a count strictly above it.
    pub cutoff: f64,
    pub malformed_samples: usize,
}

/// Round one: candidate signals from `zeta` samples per instance, filtered by total mention count.
pub fn discover_signal_space<C: ChatClient + ?Sized>(
    instances: &[Instance],
    problem: &DecisionProblem,
    client: &C,
    config: &SamplingConfig,
    templates: &PromptTemplates,
) -> Result<Discovery> {
    config.validate()?;
    let prior = empirical_prior(instances, problem)?;
    let cutoff = sample_size_threshold(config.epsilon, config.delta, prior)? * config.zeta as f64;
    let jobs: Vec<(usize, u32)> = (0..instances.len())
        .flat_map(|i| (0..config.zeta).map(move |s| (i, s)))
        .collect();
    let prompts: Vec<String> = instances
        .iter()
        .map(|inst| templates.discovery(&inst.text, config.max_signals_per_prompt))
        .collect();
    let replies = parallel_map(&jobs, config.concurrency, |_, &(i, s)| {
        client.complete(&prompts[i], config.temperature, s)
    });

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut malformed = 0;
    for (&(i, s), reply) in jobs.iter().zip(replies) {
        let text = reply.map_err(|e| Error::Pipeline(format!("discovery for {}: {e}", instances[i].id)))?;
        let Some(raw) = parse_signal_list(&text) else {
            log::warn!("instance {} sample {s}: no signal list in completion", instances[i].id);
            malformed += 1;
            continue;
        };
        let names: BTreeSet<String> = raw
            .iter()
            .take(config.max_signals_per_prompt)
            .filter_map(|n| normalize_signal_name(n))
            .collect();
        for name in names {
            *counts.entry(name).or_default() += 1;
        }
    }
    let kept: Vec<SignalDef> = counts
        .iter()
        .filter(|(_, &c)| c as f64 > cutoff)
        .map(|(name, _)| SignalDef {
            name: name.clone(),
            description: String::new(),
        })
        .collect();
    Ok(Discovery {
        space: SignalSpace::new(kept)?,
        counts,
        prior,
        cutoff,
        malformed_samples: malformed,
    })
}

/// Majority-voted occurrence rows and the underlying yes tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceMatrix {
    pub rows: Vec<SignalVector>,
    pub vote_counts: Vec<Vec<u32>>,
    pub zeta: u32,
}

impl OccurrenceMatrix {
    pub fn from_votes(vote_counts: Vec<Vec<u32>>, zeta: u32) -> Result<Self> {
        if vote_counts.iter().flatten().any(|&v| v > zeta) {
            return Err(Error::contract("a tally exceeds zeta"));
        }
        let rows = vote_counts
            .iter()
            .map(|r| SignalVector::from_bits(r.iter().map(|&v| majority(v, zeta)).collect()))
            .collect();
        Ok(Self { rows, vote_counts, zeta })
    }
}

/// Round two: `zeta` yes/no samples per (instance, signal). Unparseable answers count as no.
pub fn annotate_occurrences<C: ChatClient + ?Sized>(
    instances: &[Instance],
    space: &SignalSpace,
    client: &C,
    config: &SamplingConfig,
    templates: &PromptTemplates,
) -> Result<OccurrenceMatrix> {
    config.validate()?;
    if space.is_empty() {
        return Err(Error::contract("cannot annotate against an empty signal space"));
    }
    let m = space.len();
    let jobs: Vec<(usize, usize, u32)> = (0..instances.len())
        .flat_map(|i| (0..m).flat_map(move |j| (0..config.zeta).map(move |s| (i, j, s))))
        .collect();
    let answers = parallel_map(&jobs, config.concurrency, |_, &(i, j, s)| {
        let def = &space.signals()[j];
        let prompt = templates.occurrence(&instances[i].text, &def.name, &def.description);
        client.complete(&prompt, config.temperature, s)
    });
    let mut votes = vec![vec![0u32; m]; instances.len()];
    for (&(i, j, s), answer) in jobs.iter().zip(answers) {
        let text = answer.map_err(|e| Error::Pipeline(format!("annotation for {}: {e}", instances[i].id)))?;
        match parse_yes_no(&text) {
            Some(true) => votes[i][j] += 1,
            Some(false) => {}
            None => log::warn!(
                "instance {} signal {} sample {s}: unreadable answer counted as no",
                instances[i].id,
                space.name(j)
            ),
        }
    }
    OccurrenceMatrix::from_votes(votes, config.zeta)
}

pub const OCCURRENCE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceRow {
    pub id: String,
    pub bits: SignalVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<u32>>,
}

/// On-disk occurrence annotations, keyed by instance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceFile {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<u32>,
    pub space: SignalSpace,
    pub rows: Vec<OccurrenceRow>,
}

impl OccurrenceFile {
    pub fn new(instances: &[Instance], space: SignalSpace, rows: &[SignalVector], votes: Option<&OccurrenceMatrix>) -> Result<Self> {
        crate::data::check_rows(rows, instances.len(), space.len())?;
        Ok(Self {
            format_version: OCCURRENCE_FORMAT_VERSION,
            zeta: votes.map(|v| v.zeta),
            space,
            rows: instances
                .iter()
                .zip(rows)
                .enumerate()
                .map(|(i, (inst, bits))| OccurrenceRow {
                    id: inst.id.clone(),
                    bits: bits.clone(),
                    votes: votes.map(|v| v.vote_counts[i].clone()),
                })
                .collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        if file.format_version != OCCURRENCE_FORMAT_VERSION {
            return Err(Error::contract(format!(
                "{}: unsupported occurrence format version {}",
                path.display(),
                file.format_version
            )));
        }
        for row in &file.rows {
            if row.bits.len() != file.space.len() {
                return Err(Error::contract(format!("{}: row {} has the wrong length", path.display(), row.id)));
            }
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Builds a dataset whose occurrence rows follow the order of `instances`.
    pub fn attach(&self, instances: Vec<Instance>) -> Result<Dataset> {
        let by_id: BTreeMap<&str, &SignalVector> = self.rows.iter().map(|r| (r.id.as_str(), &r.bits)).collect();
        let rows = instances
            .iter()
            .map(|inst| {
                by_id
                    .get(inst.id.as_str())
                    .map(|b| (*b).clone())
                    .ok_or_else(|| Error::contract(format!("no occurrence row for instance {}", inst.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(instances, self.space.clone(), Some(rows))
    }
}
