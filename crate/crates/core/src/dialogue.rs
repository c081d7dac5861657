//! Conversation history shared by generators, the ranker and the service.

use serde::{Deserialize, Serialize};

use crate::nlp::EntityMention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub timestamp: i64,
    /// Generator that produced a bot turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<EntityMention>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            timestamp: 0,
            source: None,
            intent: None,
            entities: Vec::new(),
        }
    }

    pub fn bot(text: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Bot,
            text: text.into(),
            timestamp: 0,
            source: Some(source.into()),
            intent: None,
            entities: Vec::new(),
        }
    }
}

/// Ordered turns, alternating user and bot and starting with the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueHistory {
    turns: Vec<Turn>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("turn {index} by {found:?} breaks user/bot alternation")]
pub struct AlternationError {
    pub index: usize,
    pub found: Speaker,
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_turns(turns: Vec<Turn>) -> Result<Self, AlternationError> {
        let mut h = Self::new();
        for t in turns {
            h.push(t)?;
        }
        Ok(h)
    }

    /// Parses `speaker: text` pairs without the alternation check; handy for
    /// ranking data where the history is whatever was recorded.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let turns = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { Turn::user(t) } else { Turn::bot(t, "history") })
            .collect();
        Self { turns }
    }

    pub fn push(&mut self, turn: Turn) -> Result<(), AlternationError> {
        let expected = if self.turns.len() % 2 == 0 {
            Speaker::User
        } else {
            Speaker::Bot
        };
        if turn.speaker != expected {
            return Err(AlternationError {
                index: self.turns.len(),
                found: turn.speaker,
            });
        }
        self.turns.push(turn);
        Ok(())
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().map(|t| t.text.as_str())
    }

    pub fn last_user(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::User)
    }

    pub fn last_bot(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::Bot)
    }

    pub fn bot_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::Bot).count()
    }
}

/// What the bot remembers about a user across sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Milliseconds since epoch; 0 for a user never seen.
    #[serde(default)]
    pub last_seen: i64,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            name: None,
            last_seen: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternation_enforced() {
        let mut h = DialogueHistory::new();
        assert!(h.push(Turn::bot("hi", "x")).is_err());
        h.push(Turn::user("hello")).unwrap();
        assert_eq!(
            h.push(Turn::user("again")),
            Err(AlternationError {
                index: 1,
                found: Speaker::User
            })
        );
        h.push(Turn::bot("hey", "launch")).unwrap();
        assert_eq!(h.bot_turns(), 1);
        assert_eq!(h.last_user().unwrap().text, "hello");
    }
}
