//! Name-level similarity between ground-truth and extracted signals.

use serde::{Deserialize, Serialize};

use crate::dgp::ChatClient;
use crate::error::Result;

const POLARITY_PREFIXES: [&str; 4] = ["positive_", "negative_", "uncertain_", "no_"];

/// Scores a (ground truth, output) name pair in `{0, 0.5, 1}` per repetition.
pub trait SimilarityJudge: Sync {
    fn score(&self, gt: &str, out: &str, repetition: u32) -> Result<f64>;

    fn repetitions(&self) -> u32 {
        1
    }
}

/// Exact name → 1; a shared token once polarity prefixes are removed → 0.5; else 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeterministicJudge;

fn content_tokens(name: &str) -> Vec<&str> {
    let mut core = name;
    for p in POLARITY_PREFIXES {
        if let Some(rest) = core.strip_prefix(p) {
            core = rest;
            break;
        }
    }
    core.split('_').filter(|t| !t.is_empty()).collect()
}

impl SimilarityJudge for DeterministicJudge {
    fn score(&self, gt: &str, out: &str, _repetition: u32) -> Result<f64> {
        if gt == out {
            return Ok(1.0);
        }
        let a = content_tokens(gt);
        Ok(if content_tokens(out).iter().any(|t| a.contains(t)) { 0.5 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmJudgeConfig {
    pub repetitions: u32,
    pub temperature: f64,
    /// Template with `{gt}` and `{out}` placeholders.
    pub template: String,
}

const JUDGE_TEMPLATE: &str = "Compare two finding names. Reply 1 if they denote the same finding with the same polarity, 0.5 if they are related but differ in polarity or specificity, and 0 otherwise. Reply with the number only.\n\nFirst: {gt}\nSecond: {out}\n";

impl Default for LlmJudgeConfig {
    fn default() -> Self {
        Self {
            repetitions: 7,
            temperature: 0.7,
            template: JUDGE_TEMPLATE.into(),
        }
    }
}

/// Judge backed by a chat client; unreadable replies score 0.
pub struct LlmJudge<C> {
    client: C,
    config: LlmJudgeConfig,
}

impl<C: ChatClient> LlmJudge<C> {
    pub fn new(client: C, config: LlmJudgeConfig) -> Self {
        Self { client, config }
    }
}

/// First of `1`, `0.5` or `0` appearing as a number in `text`.
pub fn parse_score(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.'))
        .filter(|t| !t.is_empty())
        .find_map(|t| match t.trim_end_matches('.').parse::<f64>() {
            Ok(v) if v == 0.0 || v == 0.5 || v == 1.0 => Some(v),
            _ => None,
        })
}

impl<C: ChatClient> SimilarityJudge for LlmJudge<C> {
    fn score(&self, gt: &str, out: &str, repetition: u32) -> Result<f64> {
        let prompt = self.config.template.replace("{gt}", gt).replace("{out}", out);
        let reply = self.client.complete(&prompt, self.config.temperature, repetition)?;
        Ok(parse_score(&reply).unwrap_or_else(|| {
            log::warn!("unreadable judge reply for ({gt}, {out}); scored 0");
            0.0
        }))
    }

    fn repetitions(&self) -> u32 {
        self.config.repetitions.max(1)
    }
}

/// Mean score over the judge's repetitions.
pub fn pair_similarity<J: SimilarityJudge + ?Sized>(judge: &J, gt: &str, out: &str) -> Result<f64> {
    let reps = judge.repetitions();
    let mut total = 0.0;
    for r in 0..reps {
        total += judge.score(gt, out, r)?;
    }
    Ok(total / reps as f64)
}

/// Similarity matrix `sim[g][o]`.
pub fn similarity_matrix<J: SimilarityJudge + ?Sized>(judge: &J, gt: &[String], out: &[String]) -> Result<Vec<Vec<f64>>> {
    gt.iter()
        .map(|g| out.iter().map(|o| pair_similarity(judge, g, o)).collect())
        .collect()
}

/// Mean over ground-truth names of the best match among outputs. `None` for empty ground truth.
pub fn surface_similarity_from(sim: &[Vec<f64>]) -> Option<f64> {
    if sim.is_empty() {
        return None;
    }
    let total: f64 = sim.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).sum();
    Some(total / sim.len() as f64)
}

/// F1 where a ground-truth name is matched when some output scores ≥ 0.5 against it,
/// and an output is a false positive when it matches no ground-truth name. Both empty → 1.
pub fn f1_from(sim: &[Vec<f64>], n_out: usize) -> f64 {
    let tp = sim.iter().filter(|row| row.iter().any(|&s| s >= 0.5)).count();
    let fn_ = sim.len() - tp;
    let fp = (0..n_out)
        .filter(|&o| !sim.iter().any(|row| row[o] >= 0.5))
        .count();
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn surface_similarity<J: SimilarityJudge + ?Sized>(gt: &[String], out: &[String], judge: &J) -> Result<Option<f64>> {
    Ok(surface_similarity_from(&similarity_matrix(judge, gt, out)?))
}

pub fn f1_similarity<J: SimilarityJudge + ?Sized>(gt: &[String], out: &[String], judge: &J) -> Result<f64> {
    Ok(f1_from(&similarity_matrix(judge, gt, out)?, out.len()))
}
