//! Poly-encoder attention scoring and the other selectors.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RankerError;
use crate::guardrails::{dot, fnv1a, normalize, Embedder};

pub const DEFAULT_CONTEXT_TOKENS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyEncoderConfig {
    pub m: usize,
    pub embed_dim: usize,
    pub code_init_seed: u64,
    #[serde(default = "default_tokens")]
    pub max_context_tokens: usize,
}

fn default_tokens() -> usize {
    DEFAULT_CONTEXT_TOKENS
}

impl Default for PolyEncoderConfig {
    fn default() -> Self {
        Self {
            m: 4,
            embed_dim: crate::guardrails::DEFAULT_EMBED_DIM,
            code_init_seed: 7,
            max_context_tokens: DEFAULT_CONTEXT_TOKENS,
        }
    }
}

impl PolyEncoderConfig {
    /// `m` unit vectors drawn from a seeded standard normal.
    pub fn context_codes(&self) -> Result<Vec<Vec<f64>>, RankerError> {
        if self.m == 0 || self.embed_dim == 0 || self.max_context_tokens == 0 {
            return Err(RankerError::Config("m, embed_dim and max_context_tokens must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.code_init_seed);
        Ok((0..self.m)
            .map(|_| {
                let mut v: Vec<f64> = (0..self.embed_dim).map(|_| rng.sample(StandardNormal)).collect();
                normalize(&mut v);
                v
            })
            .collect())
    }
}

/// Keeps the most recent utterances whose whitespace tokens fit in
/// `max_tokens`, dropping the oldest first. A single newest utterance that
/// alone exceeds the budget keeps only its last `max_tokens` tokens.
pub fn truncate_history(history: &[String], max_tokens: usize) -> Vec<String> {
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0;
    for utt in history.iter().rev() {
        let n = utt.split_whitespace().count();
        if used + n > max_tokens {
            if kept.is_empty() {
                let toks: Vec<&str> = utt.split_whitespace().collect();
                kept.push(toks[toks.len() - max_tokens..].join(" "));
            }
            break;
        }
        used += n;
        kept.push(utt.clone());
    }
    kept.reverse();
    kept.retain(|u| !u.trim().is_empty());
    kept
}

/// Softmax-weighted sum of `vectors` with weights from `query · vectors`.
pub fn attend(query: &[f64], vectors: &[Vec<f64>]) -> Vec<f64> {
    let logits: Vec<f64> = vectors.iter().map(|v| dot(query, v)).collect();
    let weights = softmax(&logits);
    let dim = query.len();
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(vectors) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Poly-encoder scoring over a pluggable sentence embedder.
#[derive(Clone)]
pub struct PolyEncoder {
    pub config: PolyEncoderConfig,
    codes: Vec<Vec<f64>>,
    embedder: Arc<dyn Embedder>,
}

impl PolyEncoder {
    pub fn new(config: PolyEncoderConfig, embedder: Arc<dyn Embedder>) -> Result<Self, RankerError> {
        if embedder.dim() != config.embed_dim {
            return Err(RankerError::Config(format!(
                "embedder dim {} != embed_dim {}",
                embedder.dim(),
                config.embed_dim
            )));
        }
        Ok(Self {
            codes: config.context_codes()?,
            config,
            embedder,
        })
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    /// `m` context vectors, each attending over the utterance embeddings.
    pub fn embed_context(&self, history: &[String]) -> Result<Vec<Vec<f64>>, RankerError> {
        let kept = truncate_history(history, self.config.max_context_tokens);
        if kept.is_empty() {
            return Err(RankerError::EmptyHistory);
        }
        let utts: Vec<Vec<f64>> = kept.iter().map(|u| self.embedder.embed(u)).collect();
        Ok(self.codes.iter().map(|code| attend(code, &utts)).collect())
    }

    pub fn score_with_context(&self, context: &[Vec<f64>], candidate: &str) -> f64 {
        let c = self.embedder.embed(candidate);
        let pooled = attend(&c, context);
        dot(&c, &pooled)
    }

    pub fn score(&self, history: &[String], candidate: &str) -> Result<f64, RankerError> {
        let ctx = self.embed_context(history)?;
        Ok(self.score_with_context(&ctx, candidate))
    }
}

/// Anything that assigns candidates a higher-is-better score.
pub trait Scorer: Send + Sync {
    fn score_batch(&self, history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError>;
}

impl Scorer for PolyEncoder {
    fn score_batch(&self, history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        let ctx = self.embed_context(history)?;
        Ok(candidates.iter().map(|c| self.score_with_context(&ctx, c)).collect())
    }
}

/// Uniform random scores from a seeded stream.
#[derive(Debug)]
pub struct RandomScorer {
    rng: Mutex<ChaCha8Rng>,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl Scorer for RandomScorer {
    fn score_batch(&self, _history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        Ok(candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

/// 1 for known-good texts, 0 otherwise.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    pub good: HashSet<String>,
}

impl Scorer for OracleScorer {
    fn score_batch(&self, _history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        Ok(candidates
            .iter()
            .map(|c| if self.good.contains(*c) { 1.0 } else { 0.0 })
            .collect())
    }
}

/// Fixed per-text scores; unknown texts get `default`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureScorer {
    pub scores: HashMap<String, f64>,
    #[serde(default)]
    pub default: f64,
}

impl FixtureScorer {
    pub fn with(mut self, text: &str, score: f64) -> Self {
        self.scores.insert(text.to_owned(), score);
        self
    }
}

impl Scorer for FixtureScorer {
    fn score_batch(&self, _history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        Ok(candidates
            .iter()
            .map(|c| self.scores.get(*c).copied().unwrap_or(self.default))
            .collect())
    }
}

/// Five-way judgement from a conversation evaluator service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorScores {
    pub is_response_on_topic: f64,
    pub is_response_comprehensible: f64,
    pub is_response_interesting: f64,
    pub response_engages_user: f64,
    pub is_response_erroneous: f64,
}

pub trait ConversationEvaluator: Send + Sync {
    fn evaluate(&self, history: &[String], candidates: &[&str]) -> Result<Vec<EvaluatorScores>, RankerError>;
}

/// Deterministic stand-in: probabilities hashed from (seed, history, candidate).
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEvaluator {
    pub seed: u64,
}

impl ConversationEvaluator for MockEvaluator {
    fn evaluate(&self, history: &[String], candidates: &[&str]) -> Result<Vec<EvaluatorScores>, RankerError> {
        let ctx = fnv1a(self.seed, history.join("\n").as_bytes());
        Ok(candidates
            .iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(ctx, c.as_bytes()));
                EvaluatorScores {
                    is_response_on_topic: rng.random(),
                    is_response_comprehensible: rng.random(),
                    is_response_interesting: rng.random(),
                    response_engages_user: rng.random(),
                    is_response_erroneous: rng.random(),
                }
            })
            .collect())
    }
}

/// Selects the candidate least likely to be erroneous.
pub struct EvaluatorSelector<E> {
    pub evaluator: E,
}

impl<E: ConversationEvaluator> Scorer for EvaluatorSelector<E> {
    fn score_batch(&self, history: &[String], candidates: &[&str]) -> Result<Vec<f64>, RankerError> {
        Ok(self
            .evaluator
            .evaluate(history, candidates)?
            .into_iter()
            .map(|s| -s.is_response_erroneous)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guardrails::HashedBowEmbedder;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn truncation_drops_oldest() {
        let h = strings(&["a b c", "d e", "f g h i"]);
        assert_eq!(truncate_history(&h, 6), strings(&["d e", "f g h i"]));
        assert_eq!(truncate_history(&h, 9), h);
        assert_eq!(truncate_history(&h, 2), strings(&["h i"]));
    }

    #[test]
    fn codes_are_unit_and_seeded() {
        let cfg = PolyEncoderConfig::default();
        let a = cfg.context_codes().unwrap();
        assert_eq!(a.len(), 4);
        for c in &a {
            assert!((dot(c, c) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a, cfg.context_codes().unwrap());
    }

    #[test]
    fn single_token_self_score_is_exactly_one() {
        let cfg = PolyEncoderConfig {
            m: 1,
            ..Default::default()
        };
        let pe = PolyEncoder::new(cfg, Arc::new(HashedBowEmbedder::default())).unwrap();
        assert_eq!(pe.score(&strings(&["hello"]), "hello").unwrap(), 1.0);
        assert!(matches!(pe.score(&[], "x"), Err(RankerError::EmptyHistory)));
    }

    #[test]
    fn evaluator_selector_prefers_low_error() {
        struct Fixed;
        impl ConversationEvaluator for Fixed {
            fn evaluate(&self, _h: &[String], c: &[&str]) -> Result<Vec<EvaluatorScores>, RankerError> {
                Ok(c.iter()
                    .enumerate()
                    .map(|(i, _)| EvaluatorScores {
                        is_response_on_topic: 0.5,
                        is_response_comprehensible: 0.5,
                        is_response_interesting: 0.5,
                        response_engages_user: 0.5,
                        is_response_erroneous: [0.9, 0.1, 0.5][i],
                    })
                    .collect())
            }
        }
        let s = EvaluatorSelector { evaluator: Fixed };
        let scores = s.score_batch(&strings(&["hi"]), &["a", "b", "c"]).unwrap();
        assert_eq!(scores, vec![-0.9, -0.1, -0.5]);
    }
}
