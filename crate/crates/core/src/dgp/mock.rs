//! Deterministic offline backend.
//!
//! Reads documents made of sentences of the form `There is <finding>.` and
//! answers each prompt kind from them: discovery and extraction prompts list
//! every finding, occurrence prompts answer yes exactly when the named
//! finding is stated, and trace prompts return a trace with the required
//! sections.

use super::client::ChatClient;
use super::normalize_signal_name;
use super::prompts::{self, section};
use crate::error::Result;

/// Findings stated in `document`, in order, as written.
pub fn stated_findings(document: &str) -> Vec<String> {
    document
        .split(['.', '\n'])
        .filter_map(|s| {
            let s = s.trim();
            let lower = s.to_ascii_lowercase();
            lower
                .strip_prefix("there is ")
                .map(|_| s["there is ".len()..].trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockClient;

impl MockClient {
    fn trace(document: &str, labels: &str) -> String {
        let names: Vec<String> = serde_json::from_str::<Vec<serde_json::Value>>(labels)
            .unwrap_or_default()
            .iter()
            .filter_map(|v| v["name"].as_str().map(str::to_string))
            .collect();
        if names.is_empty() {
            return format!(
                "<thinking>\nWHY NO COMPLEMENTARY SIGNALS\nThe document states: {}\nNone of it adds to the recommendation.\n\nMODEL PREDICTION\nThe recommendation already reflects these findings.\n</thinking>",
                document.trim()
            );
        }
        let evidence: Vec<String> = names
            .iter()
            .map(|n| {
                let quote = stated_findings(document)
                    .into_iter()
                    .find(|f| normalize_signal_name(f).as_deref() == Some(n.as_str()))
                    .map(|f| format!("\"There is {f}.\""))
                    .unwrap_or_else(|| "no explicit mention".to_string());
                format!("- {n}: {quote}")
            })
            .collect();
        format!(
            "<thinking>\nEVIDENCE FROM REPORT\n{}\n\nCLINICAL RELEVANCE\nEach listed finding bears on the outcome.\n\nCOMPLEMENTARY VALUE\nThe recommendation does not reflect {}.\n</thinking>",
            evidence.join("\n"),
            names.join(", ")
        )
    }
}

impl ChatClient for MockClient {
    fn complete(&self, prompt: &str, _temperature: f64, _sample_index: u32) -> Result<String> {
        let document = section(prompt, prompts::DOCUMENT).unwrap_or("");
        if let Some(signal) = section(prompt, prompts::SIGNAL) {
            let name = signal.lines().next().unwrap_or("").trim();
            let stated = stated_findings(document)
                .iter()
                .any(|f| normalize_signal_name(f).as_deref() == Some(name));
            return Ok(if stated { "yes" } else { "no" }.to_string());
        }
        if let Some(labels) = section(prompt, prompts::LABELS) {
            return Ok(Self::trace(document, labels));
        }
        let items: Vec<serde_json::Value> = stated_findings(document)
            .into_iter()
            .map(|f| serde_json::json!({ "name": f }))
            .collect();
        Ok(format!(
            "{}\n{}\n\n{}",
            prompts::SIGNALS,
            serde_json::Value::Array(items),
            prompts::COMPLETED
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::prompts::PromptTemplates;

    #[test]
    fn answers_each_prompt_kind() {
        let t = PromptTemplates::default();
        let doc = "There is pleural effusion. There is edema.";
        let out = MockClient.complete(&t.discovery(doc, 10), 0.7, 0).unwrap();
        assert!(out.contains("\"pleural effusion\""));
        assert_eq!(MockClient.complete(&t.occurrence(doc, "edema", ""), 0.7, 3).unwrap(), "yes");
        assert_eq!(MockClient.complete(&t.occurrence(doc, "fracture", ""), 0.7, 3).unwrap(), "no");
        let tr = MockClient.complete(&t.trace(doc, 0.4, &[("edema".into(), String::new())]), 0.7, 0).unwrap();
        assert!(tr.contains("EVIDENCE FROM REPORT") && tr.contains("\"There is edema.\""));
        let empty = MockClient.complete(&t.trace(doc, 0.4, &[]), 0.7, 0).unwrap();
        assert!(empty.contains("WHY NO COMPLEMENTARY SIGNALS"));
    }
}
