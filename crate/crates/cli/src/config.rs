//! Declarative pipeline configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use anyhow::Context;
use compl_core::decision::{DecisionProblem, PayoffMode};
use compl_core::dgp::{PromptTemplates, SamplingConfig};
use compl_core::eval::{EvalConfig, LlmJudgeConfig};
use compl_core::labeler::LabelConfig;
use compl_core::posterior::FitConfig;
use compl_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub occurrences: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub extractions: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum JudgeBackend {
    #[default]
    Llm,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model: String,
    pub timeout_secs: u64,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            timeout_secs: 120,
            retry_attempts: 3,
            retry_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When set, replaces the fit, eval and synth seeds.
    pub seed: Option<u64>,
    pub mode: PayoffMode,
    pub judge: JudgeBackend,
    pub workers: usize,
    pub paths: Paths,
    pub problem: DecisionProblem,
    pub sampling: SamplingConfig,
    pub fit: FitConfig,
    pub label: LabelConfig,
    pub eval: EvalConfig,
    pub llm: LlmConfig,
    pub judge_llm: LlmJudgeConfig,
    pub prompts: PromptTemplates,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            mode: PayoffMode::Realized,
            judge: JudgeBackend::Llm,
            workers: 4,
            paths: Paths::default(),
            problem: DecisionProblem::binary_accuracy(),
            sampling: SamplingConfig::default(),
            fit: FitConfig::default(),
            label: LabelConfig::default(),
            eval: EvalConfig::default(),
            llm: LlmConfig::default(),
            judge_llm: LlmJudgeConfig::default(),
            prompts: PromptTemplates::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: Self =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(seed) = config.seed {
            config.set_seed(seed);
        }
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.fit.seed = seed;
        self.eval.seed = seed;
        self.synth.seed = seed;
    }

    /// The settings that shape outputs, without file paths.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("paths");
            obj.remove("prompts");
            obj.remove("synth");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_in_defaults() {
        let c: PipelineConfig = toml::from_str("seed = 3\n[sampling]\nzeta = 5\n[eval.breadth_threshold]\nkind = \"fixed\"\np = 0.005\n").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.sampling.zeta, 5);
        assert_eq!(c.sampling.temperature, 0.7);
        assert_eq!(c.fit, FitConfig::default());
        assert!(toml::from_str::<PipelineConfig>("sede = 3").is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), c);
    }
}
