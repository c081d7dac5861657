use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{normalize_asr, NlpError, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Person,
    Location,
    Organization,
    Title,
    Genre,
    GenericNoun,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Person => "person",
            EntityType::Location => "location",
            EntityType::Organization => "organization",
            EntityType::Title => "title",
            EntityType::Genre => "genre",
            EntityType::GenericNoun => "generic_noun",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "person" => EntityType::Person,
            "location" => EntityType::Location,
            "organization" => EntityType::Organization,
            "title" => EntityType::Title,
            "genre" => EntityType::Genre,
            "generic_noun" => EntityType::GenericNoun,
            other => return Err(format!("unknown entity type `{other}`")),
        })
    }
}

/// An entity found in an utterance. `span` holds byte offsets into the
/// utterance's `raw_text`; `surface == raw_text[span.0..span.1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub entity_type: EntityType,
    pub span: (usize, usize),
}

/// Case-insensitive multiword lexicon. Matching is token aligned and greedy:
/// longest entry wins, leftmost wins among equal lengths.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, EntityType>,
    max_tokens: usize,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, entity_type: EntityType) {
        let key = normalize_asr(surface);
        if key.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(key.split(' ').count());
        self.entries.insert(key, entity_type);
    }

    /// Parses `surface<TAB>type` lines. Blank lines and `#` comments are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, NlpError> {
        let mut gaz = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, ty) = line.split_once('\t').ok_or_else(|| NlpError::Gazetteer {
                line: i + 1,
                reason: "expected `surface<TAB>type`".into(),
            })?;
            let ty = ty.parse().map_err(|reason| NlpError::Gazetteer {
                line: i + 1,
                reason,
            })?;
            gaz.insert(surface, ty);
        }
        Ok(gaz)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, surface: &str) -> Option<EntityType> {
        self.entries.get(&normalize_asr(surface)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, EntityType)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn recognize(&self, utterance: &Utterance) -> Vec<EntityMention> {
        self.recognize_text(&utterance.raw_text)
    }

    /// Recognizes entities in text already in ASR shape.
    pub fn recognize_text(&self, raw_text: &str) -> Vec<EntityMention> {
        let tokens = token_spans(raw_text);
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = (1..=self.max_tokens.min(tokens.len() - i))
                .rev()
                .find_map(|len| {
                    let (start, _) = tokens[i];
                    let (_, end) = tokens[i + len - 1];
                    let key = raw_text[start..end].to_lowercase();
                    self.entries.get(&key).map(|ty| (len, start, end, *ty))
                });
            match longest {
                Some((len, start, end, entity_type)) => {
                    mentions.push(EntityMention {
                        surface: raw_text[start..end].to_owned(),
                        entity_type,
                        span: (start, end),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        mentions
    }
}

/// Byte spans of space-separated tokens.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (idx, ch) in text.char_indices() {
        if ch == ' ' {
            if let Some(s) = start.take() {
                spans.push((s, idx));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}
