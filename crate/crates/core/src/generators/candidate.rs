use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Remote,
    Rule,
    KnowledgeTemplate,
    Qa,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Remote => "remote",
            GeneratorKind::Rule => "rule",
            GeneratorKind::KnowledgeTemplate => "knowledge_template",
            GeneratorKind::Qa => "qa",
        })
    }
}

/// One generated response and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub source: String,
    pub kind: GeneratorKind,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_used: Option<String>,
    /// Position in the fan-out result, used as the final ranking tie-break.
    #[serde(default)]
    pub arrival: usize,
}

impl Candidate {
    /// Builds a candidate; returns `None` for blank text.
    pub fn new(text: &str, source: &str, kind: GeneratorKind, latency_ms: u64) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        Some(Self {
            text: text.to_owned(),
            source: source.to_owned(),
            kind,
            latency_ms,
            knowledge_used: None,
            arrival: 0,
        })
    }

    pub fn with_knowledge(mut self, item_id: impl Into<String>) -> Self {
        self.knowledge_used = Some(item_id.into());
        self
    }
}
