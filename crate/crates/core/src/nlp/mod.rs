//! Per-utterance feature extraction: ASR normalization, punctuation
//! restoration, gazetteer entity recognition and intent classification.
//!
//! Everything here is pure once the intent classifier and the gazetteer are
//! loaded, so both can be shared behind an `Arc` by concurrent turn handlers.

mod entities;
mod intent;
mod punctuation;

pub use entities::{EntityMention, EntityType, Gazetteer};
pub use intent::{
    classify_intent, IntentClassifier, IntentConfig, IntentDef, IntentResult, MatchKind,
    DEFAULT_CONFIDENCE_FLOOR, NONE_LABEL,
};
pub use punctuation::{has_question_clause, is_interrogative_lead, restore_punctuation};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum NlpError {
    #[error("intent configuration: {0}")]
    Config(String),
    #[error("invalid pattern for intent `{label}`: {source}")]
    Pattern {
        label: String,
        #[source]
        source: regex::Error,
    },
    #[error("gazetteer line {line}: {reason}")]
    Gazetteer { line: usize, reason: String },
    #[error("failed to parse intent config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// A user (or bot) utterance in ASR shape plus its punctuated rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub raw_text: String,
    pub restored_text: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
}

impl Utterance {
    /// Normalizes arbitrary text into ASR shape and restores punctuation.
    pub fn new(text: &str, timestamp: i64) -> Self {
        let raw_text = normalize_asr(text);
        let restored_text = restore_punctuation(&raw_text);
        Self {
            raw_text,
            restored_text,
            timestamp,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.raw_text.is_empty()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.raw_text.split(' ').filter(|t| !t.is_empty())
    }
}

/// Lowercases and strips everything except letters, digits, apostrophes and
/// single spaces.
pub fn normalize_asr(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    if text.is_ascii() {
        for b in text.bytes() {
            if b.is_ascii_alphanumeric() || b == b'\'' {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(b.to_ascii_lowercase() as char);
            } else {
                pending_space = true;
            }
        }
        return out;
    }
    for ch in text.chars() {
        let ch = match ch {
            '\u{2019}' | '\u{2018}' | '`' => '\'',
            c => c,
        };
        if ch.is_alphanumeric() || ch == '\'' {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

/// Tokens used by every text-statistics routine: lowercase, punctuation
/// stripped, whitespace split.
pub fn plain_tokens(text: &str) -> Vec<String> {
    normalize_asr(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asr_shape() {
        let u = Utterance::new("Let’s chat, OK?", 0);
        assert_eq!(u.raw_text, "let's chat ok");
        assert!(u
            .raw_text
            .chars()
            .all(|c| c.is_alphanumeric() || c == ' ' || c == '\''));
        assert_eq!(u.restored_text, "Let's chat ok.");
    }

    #[test]
    fn empty_stays_empty() {
        let u = Utterance::new("  ?! ", 0);
        assert!(u.is_empty());
        assert_eq!(u.restored_text, "");
    }
}
