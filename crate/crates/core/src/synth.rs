//! Synthetic datasets with complementarity by construction.
//!
//! Binary findings are drawn independently. The state comes from a logistic
//! score over every finding; the recommendation is the logistic of the same
//! score with the held-out findings left out, so the held-out findings carry
//! information the recommendation cannot. Each instance's text states its
//! findings one sentence at a time, and its complementary ground truth is the
//! set of held-out findings it contains.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_json, write_jsonl, Dataset, Instance, SignalDef, SignalSpace, SignalVector};
use crate::dgp::OccurrenceFile;
use crate::error::{Error, Result};
use crate::eval::ExtractionRecord;
use crate::posterior::glm::sigmoid;

/// Rates and coefficients for the negative and uncertain mentions of a finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolaritySpec {
    pub negative_rate: f64,
    pub negative_coefficient: f64,
    pub uncertain_rate: f64,
    pub uncertain_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSignal {
    pub name: String,
    /// Occurrence rate (of the positive mention when `polarity` is set).
    pub rate: f64,
    pub coefficient: f64,
    /// When set, the finding expands into mutually exclusive `positive_`, `negative_`
    /// and `uncertain_` signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<PolaritySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeRule {
    /// `y = 1[score > 0]`.
    #[default]
    Threshold,
    /// `y ~ Bernoulli(σ(score))`.
    Bernoulli,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub signals: Vec<SynthSignal>,
    pub intercept: f64,
    /// Base finding names excluded from the recommendation's score.
    pub held_out: Vec<String>,
    pub n: usize,
    pub seed: u64,
    pub outcome: OutcomeRule,
    /// Sentence rendered for each present signal; `{finding}` is the name with spaces.
    pub sentence_template: String,
}

/// (name, positive coefficient, negative coefficient, uncertain coefficient, rate)
const FINDINGS: [(&str, f64, f64, f64, f64); 11] = [
    ("atelectasis", 0.3384, 0.3633, -0.1758, 0.30),
    ("cardiomegaly", 0.7462, -0.3945, 0.3062, 0.25),
    ("consolidation", 0.9686, -0.0945, 0.6488, 0.08),
    ("enlarged_cardiomediastinum", 0.2368, -0.9585, 0.1678, 0.10),
    ("fracture", 0.3986, -0.7871, 0.2674, 0.05),
    ("lung_lesion", 0.3194, 0.1314, 0.0970, 0.05),
    ("lung_opacity", 0.7512, 0.1924, 0.7063, 0.30),
    ("pneumonia", 0.5593, 0.0380, 0.2329, 0.10),
    ("pneumothorax", 1.1280, 0.2994, 0.1718, 0.05),
    ("pleural_effusion", 1.6320, 0.0933, 0.9735, 0.30),
    ("edema", 1.8391, 0.7875, 1.3925, 0.20),
];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            signals: FINDINGS
                .iter()
                .map(|&(name, pos, _, _, rate)| SynthSignal {
                    name: name.into(),
                    rate,
                    coefficient: pos,
                    polarity: None,
                })
                .collect(),
            intercept: -1.5,
            held_out: vec!["edema".into(), "pleural_effusion".into()],
            n: 2000,
            seed: 17,
            outcome: OutcomeRule::Threshold,
            sentence_template: "There is {finding}.".into(),
        }
    }
}

impl SynthConfig {
    /// The default findings with negative and uncertain mentions enabled.
    pub fn with_polarity() -> Self {
        let mut c = Self::default();
        for (s, &(_, _, neg, unc, _)) in c.signals.iter_mut().zip(FINDINGS.iter()) {
            s.polarity = Some(PolaritySpec {
                negative_rate: 0.10,
                negative_coefficient: neg,
                uncertain_rate: 0.05,
                uncertain_coefficient: unc,
            });
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::contract("n must be at least 1"));
        }
        for s in &self.signals {
            let total = s.rate + s.polarity.as_ref().map_or(0.0, |p| p.negative_rate + p.uncertain_rate);
            let rates_ok = (0.0..=1.0).contains(&s.rate)
                && s.polarity
                    .as_ref()
                    .is_none_or(|p| (0.0..=1.0).contains(&p.negative_rate) && (0.0..=1.0).contains(&p.uncertain_rate));
            if !rates_ok || total > 1.0 + 1e-12 {
                return Err(Error::contract(format!("signal {}: rates must lie in [0, 1] and sum to at most 1", s.name)));
            }
        }
        for h in &self.held_out {
            if !self.signals.iter().any(|s| &s.name == h) {
                return Err(Error::contract(format!("held-out signal {h:?} is not in the signal list")));
            }
        }
        Ok(())
    }

    /// Expanded signals: (canonical name, base index, coefficient).
    fn expanded(&self) -> Vec<(String, usize, f64)> {
        let mut out = Vec::new();
        for (b, s) in self.signals.iter().enumerate() {
            match &s.polarity {
                None => out.push((s.name.clone(), b, s.coefficient)),
                Some(p) => {
                    out.push((format!("positive_{}", s.name), b, s.coefficient));
                    out.push((format!("negative_{}", s.name), b, p.negative_coefficient));
                    out.push((format!("uncertain_{}", s.name), b, p.uncertain_coefficient));
                }
            }
        }
        out
    }
}

/// Provenance sidecar for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config: SynthConfig,
    /// Signals whose coefficients enter the state's score.
    pub full_score_signals: Vec<String>,
    /// Signals whose coefficients enter the recommendation's score.
    pub recommendation_score_signals: Vec<String>,
    pub occurrences: Vec<crate::dgp::OccurrenceRow>,
    pub complementary: Vec<ExtractionRecord>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Held-out signals present on each instance.
    pub complementary: Vec<SignalVector>,
    /// Linear score of every signal, per instance.
    pub full_scores: Vec<f64>,
    /// Linear score without held-out signals, per instance.
    pub recommendation_scores: Vec<f64>,
    pub truth: TruthFile,
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let expanded = config.expanded();
    let held: Vec<bool> = expanded
        .iter()
        .map(|(_, b, _)| config.held_out.contains(&config.signals[*b].name))
        .collect();
    let space = SignalSpace::new(
        expanded
            .iter()
            .map(|(name, _, _)| SignalDef {
                name: name.clone(),
                description: String::new(),
            })
            .collect(),
    )?;
    let m = expanded.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::with_capacity(config.n);
    let mut rows = Vec::with_capacity(config.n);
    let mut complementary = Vec::with_capacity(config.n);
    let mut full_scores = Vec::with_capacity(config.n);
    let mut recommendation_scores = Vec::with_capacity(config.n);

    for i in 0..config.n {
        let mut bits = vec![false; m];
        let mut j = 0;
        for s in &config.signals {
            let u: f64 = rng.random();
            match &s.polarity {
                None => {
                    bits[j] = u < s.rate;
                    j += 1;
                }
                Some(p) => {
                    if u < s.rate {
                        bits[j] = true;
                    } else if u < s.rate + p.negative_rate {
                        bits[j + 1] = true;
                    } else if u < s.rate + p.negative_rate + p.uncertain_rate {
                        bits[j + 2] = true;
                    }
                    j += 3;
                }
            }
        }
        let full = config.intercept
            + (0..m).filter(|&k| bits[k]).map(|k| expanded[k].2).sum::<f64>();
        let rec = config.intercept
            + (0..m).filter(|&k| bits[k] && !held[k]).map(|k| expanded[k].2).sum::<f64>();
        let y = match config.outcome {
            OutcomeRule::Threshold => full > 0.0,
            OutcomeRule::Bernoulli => rng.random_bool(sigmoid(full)),
        };
        let text = (0..m)
            .filter(|&k| bits[k])
            .map(|k| config.sentence_template.replace("{finding}", &expanded[k].0.replace('_', " ")))
            .collect::<Vec<_>>()
            .join(" ");
        let text = if text.is_empty() { "No findings.".to_string() } else { text };
        instances.push(Instance::new(format!("synth-{i:06}"), text, sigmoid(rec), if y { "1" } else { "0" }));
        complementary.push(SignalVector::from_bits((0..m).map(|k| bits[k] && held[k]).collect()));
        rows.push(SignalVector::from_bits(bits));
        full_scores.push(full);
        recommendation_scores.push(rec);
    }

    let occ = OccurrenceFile::new(&instances, space.clone(), &rows, None)?;
    let truth = TruthFile {
        config: config.clone(),
        full_score_signals: expanded.iter().map(|e| e.0.clone()).collect(),
        recommendation_score_signals: expanded
            .iter()
            .zip(&held)
            .filter(|(_, h)| !**h)
            .map(|(e, _)| e.0.clone())
            .collect(),
        occurrences: occ.rows,
        complementary: instances
            .iter()
            .zip(&complementary)
            .map(|(inst, c)| ExtractionRecord {
                id: inst.id.clone(),
                signals: space.names_of(c),
            })
            .collect(),
    };
    Ok(SynthOutput {
        dataset: Dataset::new(instances, space, Some(rows))?,
        complementary,
        full_scores,
        recommendation_scores,
        truth,
    })
}

/// `d.jsonl` → `d<suffix>` in the same directory.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".jsonl").unwrap_or(&name);
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub dataset: PathBuf,
    pub occurrences: PathBuf,
    pub truth: PathBuf,
    pub oracle: PathBuf,
}

impl SynthPaths {
    pub fn for_dataset(path: &Path) -> Self {
        Self {
            dataset: path.to_path_buf(),
            occurrences: sibling(path, ".occ.json"),
            truth: sibling(path, ".truth.json"),
            oracle: sibling(path, ".oracle.jsonl"),
        }
    }
}

/// Writes the dataset, its occurrence file, the truth sidecar and the oracle extractions.
pub fn write_outputs(output: &SynthOutput, path: &Path) -> Result<SynthPaths> {
    let paths = SynthPaths::for_dataset(path);
    write_jsonl(&paths.dataset, &output.dataset.instances)?;
    OccurrenceFile::new(
        &output.dataset.instances,
        output.dataset.space.clone(),
        output.dataset.occurrences()?,
        None,
    )?
    .write(&paths.occurrences)?;
    write_json(&paths.truth, &output.truth)?;
    write_jsonl(&paths.oracle, &output.truth.complementary)?;
    Ok(paths)
}
