//! Low-latency filters applied to every candidate before ranking.
//!
//! Four checks run cheapest first: n-gram degeneration, offensiveness,
//! selfhood (bot claiming human activities) and repetition against what the
//! bot already said this session. A candidate survives only when all pass.
//! The offensiveness check also screens user utterances.

mod embed;
mod offensive;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, dot, fnv1a, normalize, Embedder, HashedBowEmbedder, DEFAULT_EMBED_DIM, DEFAULT_HASH_SEED};
pub use offensive::{LexiconModel, OffensivenessModel};

use crate::generators::Candidate;
use crate::nlp::IntentClassifier;

/// Intent label the selfhood check looks for.
pub const HUMAN_ACTIVITY_INTENT: &str = "human_activity";

#[derive(Debug, thiserror::Error)]
pub enum GuardrailError {
    #[error("profanity lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Repetition,
    Offensive,
    Degeneration,
    Selfhood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub rule: Rule,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Verdict {
    fn pass(rule: Rule, score: Option<f64>) -> Self {
        Self {
            passed: true,
            rule,
            detail: String::new(),
            score,
        }
    }

    fn fail(rule: Rule, detail: String, score: Option<f64>) -> Self {
        debug_assert!(!detail.is_empty());
        Self {
            passed: false,
            rule,
            detail,
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionThresholds {
    pub full: f64,
    pub last_sentence: f64,
}

impl Default for RepetitionThresholds {
    fn default() -> Self {
        Self {
            full: 0.92,
            last_sentence: 0.95,
        }
    }
}

/// Embeddings of every bot response spoken this session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMemory {
    pub full_embeddings: Vec<(Vec<f64>, usize)>,
    pub last_sentence_embeddings: Vec<(Vec<f64>, usize)>,
}

impl RepetitionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn remember(&mut self, text: &str, turn_index: usize, embedder: &dyn Embedder) {
        self.full_embeddings.push((embedder.embed(text), turn_index));
        self.last_sentence_embeddings
            .push((embedder.embed(last_sentence(text)), turn_index));
    }

    pub fn len(&self) -> usize {
        self.full_embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full_embeddings.is_empty()
    }
}

/// Final `.`/`!`/`?`-delimited segment with content, or the whole text.
pub fn last_sentence(text: &str) -> &str {
    text.split(['.', '!', '?'])
        .map(str::trim)
        .rfind(|s| !s.is_empty())
        .unwrap_or(text.trim())
}

pub fn check_repetition(
    candidate: &Candidate,
    memory: &RepetitionMemory,
    embedder: &dyn Embedder,
    thresholds: RepetitionThresholds,
) -> Verdict {
    let full = embedder.embed(&candidate.text);
    let max_full = max_similarity(&full, &memory.full_embeddings);
    if let Some((sim, turn)) = max_full {
        if sim >= thresholds.full {
            return Verdict::fail(
                Rule::Repetition,
                format!("full text cosine {sim:.4} vs bot turn {turn} >= {}", thresholds.full),
                Some(sim),
            );
        }
    }
    let last = embedder.embed(last_sentence(&candidate.text));
    if let Some((sim, turn)) = max_similarity(&last, &memory.last_sentence_embeddings) {
        if sim >= thresholds.last_sentence {
            return Verdict::fail(
                Rule::Repetition,
                format!(
                    "last sentence cosine {sim:.4} vs bot turn {turn} >= {}",
                    thresholds.last_sentence
                ),
                Some(sim),
            );
        }
    }
    Verdict::pass(Rule::Repetition, Some(max_full.map_or(0.0, |(s, _)| s)))
}

/// Highest cosine against the stored vectors, with the turn it came from.
fn max_similarity(v: &[f64], stored: &[(Vec<f64>, usize)]) -> Option<(f64, usize)> {
    stored
        .iter()
        .map(|(w, turn)| (cosine(v, w), *turn))
        .reduce(|best, x| if x.0 > best.0 { x } else { best })
}

pub const DEFAULT_OFFENSIVE_THRESHOLD: f64 = 0.8;

pub fn check_offensive(text: &str, model: &dyn OffensivenessModel, threshold: f64) -> Verdict {
    let score = model.score(text);
    if score >= threshold {
        Verdict::fail(
            Rule::Offensive,
            format!("toxicity {score:.3} >= {threshold}"),
            Some(score),
        )
    } else {
        Verdict::pass(Rule::Offensive, Some(score))
    }
}

/// Maximum allowed occurrences of any single n-gram, per n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerationPolicy {
    pub per_n_thresholds: BTreeMap<usize, usize>,
}

impl Default for DegenerationPolicy {
    fn default() -> Self {
        Self {
            per_n_thresholds: BTreeMap::from([(1, 5), (2, 3), (3, 2), (4, 2)]),
        }
    }
}

pub fn check_degeneration(text: &str, policy: &DegenerationPolicy) -> Verdict {
    let normalized = crate::nlp::normalize_asr(text);
    let mut toks: Vec<&str> = Vec::with_capacity(normalized.len() / 2 + 1);
    toks.extend(normalized.split(' ').filter(|t| !t.is_empty()));
    // intern tokens so n-grams compare as integer slices
    let mut vocab: Vec<&str> = Vec::with_capacity(16);
    let ids: Vec<u32> = toks
        .iter()
        .map(|t| match vocab.iter().position(|v| v == t) {
            Some(i) => i as u32,
            None => {
                vocab.push(t);
                vocab.len() as u32 - 1
            }
        })
        .collect();
    // class[i] numbers the n-gram starting at i; n+1-gram classes come from
    // sorting (class of the n-gram, next token) pairs
    let max_n = policy.per_n_thresholds.keys().copied().max().unwrap_or(0);
    let mut class = ids.clone();
    let mut sizes: Vec<usize> = Vec::with_capacity(toks.len());
    sizes.resize(vocab.len(), 0);
    for &c in &class {
        sizes[c as usize] += 1;
    }
    let mut keyed: Vec<(u32, u32, u32)> = Vec::with_capacity(class.len());
    for n in 1..=max_n.min(toks.len()) {
        if n > 1 {
            let starts = toks.len() - n + 1;
            keyed.clear();
            keyed.extend((0..starts).map(|i| (class[i], ids[i + n - 1], i as u32)));
            keyed.sort_unstable();
            sizes.clear();
            class.truncate(starts);
            let mut prev = None;
            for &(a, b, i) in &keyed {
                if prev != Some((a, b)) {
                    prev = Some((a, b));
                    sizes.push(0);
                }
                *sizes.last_mut().expect("pushed") += 1;
                class[i as usize] = sizes.len() as u32 - 1;
            }
        }
        let Some(&limit) = policy.per_n_thresholds.get(&n) else {
            continue;
        };
        // report the earliest offending n-gram so the detail is deterministic
        if let Some(start) = (0..class.len()).find(|&i| sizes[class[i] as usize] > limit) {
            let count = sizes[class[start] as usize];
            return Verdict::fail(
                Rule::Degeneration,
                format!("{n}-gram `{}` occurs {count} > {limit} times", toks[start..start + n].join(" ")),
                Some(count as f64),
            );
        }
    }
    Verdict::pass(Rule::Degeneration, None)
}

pub fn check_selfhood(text: &str, classifier: &IntentClassifier) -> Verdict {
    if text.trim().is_empty() {
        return Verdict::pass(Rule::Selfhood, None);
    }
    let result = classifier.classify_raw(&crate::nlp::normalize_asr(text));
    if result.intent_name == HUMAN_ACTIVITY_INTENT {
        Verdict::fail(
            Rule::Selfhood,
            format!("classified as {HUMAN_ACTIVITY_INTENT} ({:.3})", result.confidence),
            Some(result.confidence),
        )
    } else {
        Verdict::pass(Rule::Selfhood, Some(result.confidence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardrailConfig {
    #[serde(default)]
    pub repetition: RepetitionThresholds,
    #[serde(default = "default_offensive")]
    pub offensive_threshold: f64,
    #[serde(default)]
    pub degeneration: DegenerationPolicy,
}

fn default_offensive() -> f64 {
    DEFAULT_OFFENSIVE_THRESHOLD
}

impl Default for GuardrailConfig {
    fn default() -> Self {
        Self {
            repetition: RepetitionThresholds::default(),
            offensive_threshold: DEFAULT_OFFENSIVE_THRESHOLD,
            degeneration: DegenerationPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub candidate: Candidate,
    pub verdicts: Vec<Verdict>,
}

impl AuditEntry {
    pub fn survived(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// All four guardrails wired to their models.
#[derive(Clone)]
pub struct Guardrails {
    pub config: GuardrailConfig,
    pub embedder: Arc<dyn Embedder>,
    pub offensiveness: Arc<dyn OffensivenessModel>,
    pub classifier: Arc<IntentClassifier>,
}

impl Guardrails {
    /// Runs degeneration, offensive, selfhood and repetition in that order,
    /// stopping at the first failure. The audit keeps one entry per input.
    pub fn apply_all(
        &self,
        candidates: Vec<Candidate>,
        memory: &RepetitionMemory,
    ) -> (Vec<Candidate>, Vec<AuditEntry>) {
        let mut survivors = Vec::new();
        let mut audit = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            let verdicts = self.verdicts(&candidate, memory);
            let entry = AuditEntry {
                candidate,
                verdicts,
            };
            if entry.survived() {
                survivors.push(entry.candidate.clone());
            }
            audit.push(entry);
        }
        (survivors, audit)
    }

    pub fn verdicts(&self, candidate: &Candidate, memory: &RepetitionMemory) -> Vec<Verdict> {
        let checks: [&dyn Fn() -> Verdict; 4] = [
            &|| check_degeneration(&candidate.text, &self.config.degeneration),
            &|| {
                check_offensive(
                    &candidate.text,
                    self.offensiveness.as_ref(),
                    self.config.offensive_threshold,
                )
            },
            &|| check_selfhood(&candidate.text, &self.classifier),
            &|| {
                check_repetition(
                    candidate,
                    memory,
                    self.embedder.as_ref(),
                    self.config.repetition,
                )
            },
        ];
        let mut verdicts = Vec::with_capacity(4);
        for check in checks {
            let v = check();
            let failed = !v.passed;
            verdicts.push(v);
            if failed {
                break;
            }
        }
        verdicts
    }

    pub fn screen_user(&self, text: &str) -> Verdict {
        check_offensive(text, self.offensiveness.as_ref(), self.config.offensive_threshold)
    }
}
