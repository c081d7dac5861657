//! Rule-based response generators and the QA gate.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::UserProfile;
use crate::nlp::{has_question_clause, IntentResult, Utterance};

use super::{seeded_index, Candidate, GeneratorError, GeneratorKind, LocalGenerator, TurnContext};

pub const LAUNCH_SOURCE: &str = "LAUNCH";
pub const FAVORITE_SOURCE: &str = "FAVORITE";
pub const FALLBACK_SOURCE: &str = "FALLBACK";
pub const SENSITIVE_SOURCE: &str = "SENSITIVE";
pub const QA_SOURCE: &str = "QA";

/// Bot turns handled by the launch generator.
pub const LAUNCH_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchTemplates {
    pub new_user: String,
    /// Must contain `{name}`.
    pub returning: String,
    /// Must contain `{name}`.
    pub named: String,
    pub unnamed: String,
}

/// Every templated rule response, loaded from one config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTemplates {
    pub launch: LaunchTemplates,
    /// Recovery responses keyed by fallback intent label.
    pub fallback: BTreeMap<String, Vec<String>>,
    /// Deflections keyed by sensitive intent label.
    pub sensitive: BTreeMap<String, String>,
    pub farewell: String,
    pub prestop: String,
    pub discomfort: Vec<String>,
    /// Used when no candidate survives.
    pub topic_prompts: Vec<String>,
    /// Knowledge response templates with one `{headline}` slot.
    pub knowledge: Vec<String>,
}

impl ResponseTemplates {
    pub fn from_toml(text: &str) -> Result<Self, GeneratorError> {
        let t: Self = toml::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        for (label, templates) in &self.fallback {
            if templates.len() < 3 {
                return Err(GeneratorError::Config(format!(
                    "fallback intent `{label}` needs at least 3 templates"
                )));
            }
        }
        for (name, t) in [("returning", &self.launch.returning), ("named", &self.launch.named)] {
            if !t.contains("{name}") {
                return Err(GeneratorError::Config(format!(
                    "launch template `{name}` lacks a {{name}} slot"
                )));
            }
        }
        for (what, list) in [
            ("discomfort", &self.discomfort),
            ("topic_prompts", &self.topic_prompts),
            ("knowledge", &self.knowledge),
        ] {
            if list.is_empty() {
                return Err(GeneratorError::Config(format!("`{what}` templates are empty")));
            }
        }
        if let Some(bad) = self.knowledge.iter().find(|t| t.matches("{headline}").count() != 1) {
            return Err(GeneratorError::Config(format!(
                "knowledge template `{bad}` must have exactly one {{headline}} slot"
            )));
        }
        Ok(())
    }
}

fn rule_candidate(text: &str, source: &str) -> Option<Candidate> {
    Candidate::new(text, source, GeneratorKind::Rule, 0)
}

static NAME_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:(?:hi|hello|hey|well|oh|yes|yeah|sure|okay|ok)\s+)*(?:my name is|my name's|my names|i'm|im|i am|call me|it's|its|this is)\s+([a-z][a-z'\-]*)(?:\s.*)?$",
    )
    .expect("valid name pattern")
});

const NOT_NAMES: &[&str] = &[
    "yes", "no", "yeah", "nope", "hi", "hello", "hey", "what", "why", "ok", "okay", "sure", "stop",
    "good", "fine", "great", "nothing", "maybe", "alexa", "um", "uh", "hmm", "thanks", "tired",
    "bored", "not", "sorry",
];

/// Pulls a first name out of an utterance. A bare single token counts only
/// when the bot asked for the name on the previous turn.
pub fn extract_name(utterance: &Utterance, asked_for_name: bool) -> Option<String> {
    let raw = utterance.raw_text.as_str();
    if let Some(caps) = NAME_PATTERN.captures(raw) {
        let name = caps[1].to_owned();
        if !NOT_NAMES.contains(&name.as_str()) {
            return Some(name);
        }
    }
    let mut toks = utterance.tokens();
    match (toks.next(), toks.next()) {
        (Some(tok), None) if asked_for_name && !NOT_NAMES.contains(&tok) => Some(tok.to_owned()),
        _ => None,
    }
}

/// Greeting logic for the first bot turns. Stores a newly learned name on
/// the profile. Returns `None` outside the launch window and for returning
/// users after the greeting.
pub fn launch_response(
    profile: &mut UserProfile,
    turn_index: usize,
    utterance: &Utterance,
    templates: &LaunchTemplates,
) -> Option<Candidate> {
    if turn_index >= LAUNCH_WINDOW {
        return None;
    }
    let name = profile.name.clone();
    match (turn_index, name) {
        (0, Some(name)) => rule_candidate(&templates.returning.replace("{name}", &name), LAUNCH_SOURCE),
        (0, None) => rule_candidate(&templates.new_user, LAUNCH_SOURCE),
        (_, Some(_)) => None,
        (_, None) => match extract_name(utterance, true) {
            // new user answering the name request
            Some(name) => {
                let text = templates.named.replace("{name}", &name);
                profile.name = Some(name);
                rule_candidate(&text, LAUNCH_SOURCE)
            }
            None => rule_candidate(&templates.unnamed, LAUNCH_SOURCE),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaEntry {
    /// Anchored regex over the ASR-shaped utterance.
    pub pattern: String,
    pub answer: String,
    pub reason: String,
}

/// The bot's stated preferences, checked in order.
#[derive(Debug, Clone)]
pub struct PersonaTable {
    entries: Vec<(Regex, PersonaEntry)>,
}

#[derive(Deserialize)]
struct PersonaDoc {
    #[serde(rename = "favorite")]
    entries: Vec<PersonaEntry>,
}

impl PersonaTable {
    pub fn new(entries: Vec<PersonaEntry>) -> Result<Self, GeneratorError> {
        let entries = entries
            .into_iter()
            .map(|e| {
                Regex::new(&format!("^(?:{})$", e.pattern))
                    .map(|re| (re, e.clone()))
                    .map_err(|err| GeneratorError::Config(format!("persona pattern `{}`: {err}", e.pattern)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn from_toml(text: &str) -> Result<Self, GeneratorError> {
        let doc: PersonaDoc = toml::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        Self::new(doc.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn favorite_response(utterance: &Utterance, persona: &PersonaTable) -> Option<Candidate> {
    persona
        .entries
        .iter()
        .find(|(re, _)| re.is_match(&utterance.raw_text))
        .and_then(|(_, e)| rule_candidate(&format!("{} {}", e.answer, e.reason), FAVORITE_SOURCE))
}

pub fn fallback_response(
    intent: &IntentResult,
    templates: &ResponseTemplates,
    rng_seed: u64,
) -> Option<Candidate> {
    let options = templates.fallback.get(&intent.intent_name)?;
    let pick = &options[seeded_index(rng_seed, options.len())];
    rule_candidate(pick, FALLBACK_SOURCE)
}

pub fn is_sensitive_intent(intent: &IntentResult) -> bool {
    intent.intent_name.starts_with("sensitive_")
}

pub fn sensitive_response(intent: &IntentResult, templates: &ResponseTemplates) -> Option<Candidate> {
    templates
        .sensitive
        .get(&intent.intent_name)
        .and_then(|t| rule_candidate(t, SENSITIVE_SOURCE))
}

/// Answers factual questions; stands in for a hosted QA service.
#[async_trait]
pub trait QaClient: Send + Sync {
    async fn answer(&self, question: &str) -> Result<Option<String>, GeneratorError>;
}

/// Answers when the ASR-shaped question contains one of the configured phrases.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureQaClient {
    pub entries: Vec<(String, String)>,
}

impl FixtureQaClient {
    pub fn with(mut self, phrase: &str, answer: &str) -> Self {
        self.entries
            .push((crate::nlp::normalize_asr(phrase), answer.to_owned()));
        self
    }
}

#[async_trait]
impl QaClient for FixtureQaClient {
    async fn answer(&self, question: &str) -> Result<Option<String>, GeneratorError> {
        let q = crate::nlp::normalize_asr(question);
        Ok(self
            .entries
            .iter()
            .find(|(phrase, _)| q.contains(phrase.as_str()))
            .map(|(_, a)| a.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionGate {
    /// Punctuation restoration produced a trailing `?`.
    #[default]
    LeadingInterrogative,
    /// Any clause opens like a question (see [`has_question_clause`]).
    AnyClause,
}

impl QuestionGate {
    pub fn is_open(self, utterance: &Utterance, intent: &IntentResult) -> bool {
        if is_sensitive_intent(intent) || utterance.is_empty() {
            return false;
        }
        match self {
            QuestionGate::LeadingInterrogative => utterance.restored_text.ends_with('?'),
            QuestionGate::AnyClause => {
                utterance.restored_text.ends_with('?') || has_question_clause(&utterance.raw_text)
            }
        }
    }
}

pub async fn qa_candidate(
    utterance: &Utterance,
    intent: &IntentResult,
    gate: QuestionGate,
    client: &dyn QaClient,
) -> Option<Candidate> {
    if !gate.is_open(utterance, intent) {
        return None;
    }
    match client.answer(&utterance.restored_text).await {
        Ok(Some(answer)) => Candidate::new(&answer, QA_SOURCE, GeneratorKind::Qa, 0),
        Ok(None) => None,
        Err(e) => {
            tracing::warn!(error = %e, "qa client failed");
            None
        }
    }
}

/// [`favorite_response`] as a fan-out member.
pub struct FavoriteGenerator {
    pub persona: PersonaTable,
}

#[async_trait]
impl LocalGenerator for FavoriteGenerator {
    async fn generate(&self, ctx: &TurnContext) -> Vec<Candidate> {
        favorite_response(&ctx.utterance, &self.persona).into_iter().collect()
    }
}

/// [`fallback_response`] as a fan-out member, seeded by the turn.
pub struct FallbackGenerator {
    pub templates: std::sync::Arc<ResponseTemplates>,
}

#[async_trait]
impl LocalGenerator for FallbackGenerator {
    async fn generate(&self, ctx: &TurnContext) -> Vec<Candidate> {
        fallback_response(&ctx.intent, &self.templates, ctx.seed).into_iter().collect()
    }
}

/// [`qa_candidate`] as a fan-out member.
pub struct QaGenerator {
    pub gate: QuestionGate,
    pub client: std::sync::Arc<dyn QaClient>,
}

#[async_trait]
impl LocalGenerator for QaGenerator {
    async fn generate(&self, ctx: &TurnContext) -> Vec<Candidate> {
        qa_candidate(&ctx.utterance, &ctx.intent, self.gate, self.client.as_ref())
            .await
            .into_iter()
            .collect()
    }
}
