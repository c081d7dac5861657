//! Local knowledge graph: annotated feed posts stored as triples, queried by
//! entity overlap, topic and recency, and rendered into templated responses.

mod render;
mod store;
mod triples;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use render::{date_of, render_knowledge_response, VikgGenerator, VIKG_SOURCE};
pub use store::{annotate, compare_ranked, IngestOutcome, IngestReport, KnowledgeStore, RetrievalScore, RECENCY_WINDOW_DAYS};
pub use triples::{canonical_triples, parse_tsv, to_tsv, Object, Predicate, Triple};

use crate::nlp::{EntityMention, Gazetteer};
use crate::guardrails::OffensivenessModel;

/// Offensiveness score at or above which a document is not stored.
pub const INGEST_OFFENSIVE_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("document has an empty headline")]
    EmptyHeadline,
    #[error("unparseable date `{0}`")]
    Date(String),
    #[error("document dated {date} is in the future (today is {today})")]
    FutureDate { date: NaiveDate, today: NaiveDate },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("knowledge config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a feed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedDocument {
    pub headline: String,
    #[serde(default)]
    pub body: String,
    /// ISO-8601 date, optionally with a time part.
    pub date: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub headline: String,
    #[serde(default)]
    pub body: String,
    /// Mentions found in the ASR-shaped headline and body; spans index into
    /// [`KnowledgeItem::annotation_text`].
    pub entities: Vec<EntityMention>,
    pub topic: String,
    pub published_on: NaiveDate,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl KnowledgeItem {
    /// The text entity spans refer to.
    pub fn annotation_text(&self) -> String {
        annotation_text(&self.headline, &self.body)
    }

    /// Lowercased distinct entity surfaces, in first-mention order.
    pub fn entity_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = Vec::new();
        for e in &self.entities {
            if !keys.contains(&e.surface) {
                keys.push(e.surface.clone());
            }
        }
        keys
    }
}

pub(crate) fn annotation_text(headline: &str, body: &str) -> String {
    crate::nlp::normalize_asr(&format!("{headline} {body}"))
}

/// Label assigned when no topic keyword matches.
pub const GENERAL_TOPIC: &str = "general";

/// Maps keywords to topic labels; the topic with the most keyword hits wins,
/// ties going to the alphabetically first label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLexicon {
    pub topics: BTreeMap<String, Vec<String>>,
}

impl TopicLexicon {
    pub fn from_toml(text: &str) -> Result<Self, KnowledgeError> {
        let lex: Self = toml::from_str(text).map_err(|e| KnowledgeError::Config(e.to_string()))?;
        if lex.topics.contains_key(GENERAL_TOPIC) {
            return Err(KnowledgeError::Config(format!("`{GENERAL_TOPIC}` is reserved")));
        }
        Ok(lex)
    }

    /// Best topic for ASR-shaped text, if any keyword occurs.
    pub fn detect(&self, raw_text: &str) -> Option<&str> {
        let padded = format!(" {} ", crate::nlp::normalize_asr(raw_text));
        let mut best: Option<(&str, usize)> = None;
        for (topic, words) in &self.topics {
            let hits = words
                .iter()
                .filter(|w| padded.contains(&format!(" {} ", w.to_lowercase())))
                .count();
            if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
                best = Some((topic, hits));
            }
        }
        best.map(|(t, _)| t)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }
}

/// Everything ingestion needs to annotate and screen a document.
#[derive(Clone, Copy)]
pub struct Annotators<'a> {
    pub gazetteer: &'a Gazetteer,
    pub topics: &'a TopicLexicon,
    pub offensiveness: &'a dyn OffensivenessModel,
    pub threshold: f64,
}

pub(crate) fn parse_date(s: &str) -> Result<NaiveDate, KnowledgeError> {
    let s = s.trim();
    let day = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(day, "%Y-%m-%d").map_err(|_| KnowledgeError::Date(s.to_owned()))
}
