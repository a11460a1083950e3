//! Prompt templates and the bracketed section layout shared by every prompt and completion.
//!
//! Templates are plain text with `{placeholder}` substitution. Sections are
//! introduced by a line of the form `[[ name ]]` and run to the next such line.

use serde::{Deserialize, Serialize};

pub const DOCUMENT: &str = "[[ document ]]";
pub const RECOMMENDATION: &str = "[[ recommendation ]]";
pub const SIGNAL: &str = "[[ signal ]]";
pub const SIGNALS: &str = "[[ signals ]]";
pub const LABELS: &str = "[[ labels ]]";
pub const ANSWER: &str = "[[ answer ]]";
pub const COMPLETED: &str = "[[ completed ]]";

/// Trace sections required when the label set is non-empty.
pub const TRACE_SECTIONS: [&str; 3] = ["EVIDENCE FROM REPORT", "CLINICAL RELEVANCE", "COMPLEMENTARY VALUE"];
/// Trace sections required when the label set is empty.
pub const EMPTY_TRACE_SECTIONS: [&str; 2] = ["WHY NO COMPLEMENTARY SIGNALS", "MODEL PREDICTION"];

const DISCOVERY: &str = r#"You read a document and list the discrete findings in it that bear on {task}.

List a finding only when the document states it outright, as present, absent or uncertain. Put the polarity in the name: positive_<finding>, negative_<finding> or uncertain_<finding>, or the bare finding name when the document simply states it. Names are lowercase with underscores. Give each finding at most one polarity and list at most {k} findings. If nothing qualifies, return an empty list.

Reply with a JSON list of objects with a single "name" field, placed in the layout below, and nothing else.

[[ document ]]
{document}

[[ signals ]]
[{"name": "example_signal"}]

[[ completed ]]
"#;

const OCCURRENCE: &str = r#"Does the document below state the finding named in the signal section? Reply with one word, yes or no.

[[ signal ]]
{signal}
{description}

[[ document ]]
{document}

[[ answer ]]
"#;

const TRACE: &str = r#"You write a short reasoning trace explaining why the listed findings carry information about {task} that the recommendation does not already carry. Use only the document as evidence.

Wrap the trace in <thinking>...</thinking>.

When the labels list is non-empty, write exactly these sections:
1. EVIDENCE FROM REPORT: quote the span of the document behind each finding, or say that it is inferred from specific wording.
2. CLINICAL RELEVANCE: why each finding bears on the outcome.
3. COMPLEMENTARY VALUE: what each finding adds beyond the recommendation. Treat any other relevant finding in the document as already reflected in the recommendation.

When the labels list is empty, write exactly these sections:
1. WHY NO COMPLEMENTARY SIGNALS: what in the document points to no additional information.
2. MODEL PREDICTION: whether that is consistent with the recommendation.

Do not write the final list of findings.

[[ document ]]
{document}

[[ recommendation ]]
{recommendation}

[[ labels ]]
{signals}
"#;

const EXTRACTION: &str = r#"You read a document together with an upstream recommendation about {task}, and list findings stated in the document that add information the recommendation does not already capture.

List a finding only when the document states it outright and it changes the assessment beyond the recommendation. If none qualifies, return an empty list. List at most {k} findings, lowercase with underscores.

[[ document ]]
{document}

[[ recommendation ]]
{recommendation}

[[ signals ]]
"#;

/// The four prompt templates used by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    /// Short description of the decision target, substituted for `{task}`.
    pub task: String,
    pub discovery: String,
    pub occurrence: String,
    pub trace: String,
    pub extraction: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            task: "the outcome".into(),
            discovery: DISCOVERY.into(),
            occurrence: OCCURRENCE.into(),
            trace: TRACE.into(),
            extraction: EXTRACTION.into(),
        }
    }
}

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

impl PromptTemplates {
    pub fn discovery(&self, document: &str, k: usize) -> String {
        fill(&self.discovery, &[("task", &self.task), ("k", &k.to_string()), ("document", document)])
    }

    pub fn occurrence(&self, document: &str, signal: &str, description: &str) -> String {
        fill(
            &self.occurrence,
            &[("task", &self.task), ("signal", signal), ("description", description), ("document", document)],
        )
    }

    /// `labels` pairs each canonical name with its description.
    pub fn trace(&self, document: &str, recommendation: f64, labels: &[(String, String)]) -> String {
        fill(
            &self.trace,
            &[
                ("task", &self.task),
                ("document", document),
                ("recommendation", &recommendation.to_string()),
                ("signals", &label_list(labels)),
            ],
        )
    }

    pub fn extraction(&self, document: &str, recommendation: f64, k: usize) -> String {
        fill(
            &self.extraction,
            &[
                ("task", &self.task),
                ("k", &k.to_string()),
                ("document", document),
                ("recommendation", &recommendation.to_string()),
            ],
        )
    }
}

fn label_list(labels: &[(String, String)]) -> String {
    let items: Vec<serde_json::Value> = labels
        .iter()
        .map(|(name, description)| {
            if description.is_empty() {
                serde_json::json!({ "name": name })
            } else {
                serde_json::json!({ "name": name, "description": description })
            }
        })
        .collect();
    serde_json::Value::Array(items).to_string()
}

/// Renders the `[[ signals ]]` block that ends an extraction completion.
pub fn signal_block(names: &[String]) -> String {
    let items: Vec<serde_json::Value> = names.iter().map(|n| serde_json::json!({ "name": n })).collect();
    format!("{SIGNALS}\n{}\n\n{COMPLETED}", serde_json::Value::Array(items))
}

/// Text of the section introduced by `marker`, up to the next `[[ ... ]]` line.
pub fn section<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    let start = text.find(marker)? + marker.len();
    let rest = &text[start..];
    let end = rest
        .match_indices("\n[[")
        .map(|(i, _)| i)
        .next()
        .unwrap_or(rest.len());
    Some(rest[..end].trim())
}
