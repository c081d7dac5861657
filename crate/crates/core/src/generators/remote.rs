//! Remote response generators: the wire contract, an HTTP client for it and
//! the mock implementations used in tests and offline runs.

use std::collections::HashMap;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{DialogueHistory, Speaker};
use crate::guardrails::fnv1a;

use super::GeneratorError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTurn {
    pub speaker: Speaker,
    pub text: String,
}

/// Body of a generate call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub history: Vec<WireTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<String>,
}

impl GenerateRequest {
    pub fn from_history(history: &DialogueHistory, knowledge: Option<String>) -> Self {
        Self {
            history: history
                .turns()
                .iter()
                .map(|t| WireTurn {
                    speaker: t.speaker,
                    text: t.text.clone(),
                })
                .collect(),
            knowledge,
        }
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.history
            .iter()
            .rev()
            .find(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

/// A generator reached over the network (or a stand-in for one).
/// `attempt` is the invocation index within one fan-out.
#[async_trait]
pub trait RemoteGenerator: Send + Sync {
    async fn generate(
        &self,
        request: &GenerateRequest,
        attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError>;
}

/// POSTs the request as JSON to a fixed URL and expects `{"text": ...}`.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    client: reqwest::Client,
    url: String,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, read_timeout: Duration) -> Result<Self, GeneratorError> {
        let client = reqwest::Client::builder()
            .timeout(read_timeout)
            .build()
            .map_err(|e| GeneratorError::Config(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
        })
    }
}

#[async_trait]
impl RemoteGenerator for HttpGenerator {
    async fn generate(
        &self,
        request: &GenerateRequest,
        _attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError> {
        let resp = self
            .client
            .post(&self.url)
            .json(request)
            .send()
            .await
            .map_err(|e| GeneratorError::Invocation(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(GeneratorError::Invocation(format!(
                "{} returned {}",
                self.url,
                resp.status()
            )));
        }
        resp.json()
            .await
            .map_err(|e| GeneratorError::Invocation(e.to_string()))
    }
}

/// Repeats the last user utterance after a fixed delay.
#[derive(Debug, Clone)]
pub struct EchoGenerator {
    pub latency: Duration,
}

#[async_trait]
impl RemoteGenerator for EchoGenerator {
    async fn generate(
        &self,
        request: &GenerateRequest,
        _attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError> {
        tokio::time::sleep(self.latency).await;
        let text = request.last_user_text().unwrap_or("hello");
        Ok(GenerateResponse {
            text: format!("you said {text}"),
        })
    }
}

/// Always fails, optionally after a delay.
#[derive(Debug, Clone, Default)]
pub struct FailingGenerator {
    pub latency: Duration,
}

#[async_trait]
impl RemoteGenerator for FailingGenerator {
    async fn generate(
        &self,
        _request: &GenerateRequest,
        _attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError> {
        tokio::time::sleep(self.latency).await;
        Err(GeneratorError::Invocation("generator unavailable".into()))
    }
}

/// One scripted invocation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub latency_ms: u64,
    /// `None` makes the invocation fail.
    pub text: Option<String>,
}

impl ScriptStep {
    pub fn ok(latency_ms: u64, text: impl Into<String>) -> Self {
        Self {
            latency_ms,
            text: Some(text.into()),
        }
    }

    pub fn fail(latency_ms: u64) -> Self {
        Self {
            latency_ms,
            text: None,
        }
    }
}

/// Replies from a script. Steps are looked up by the normalized last user
/// utterance, falling back to `default`; invocation `i` uses step
/// `i % steps.len()`. An empty step list fails immediately.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    by_utterance: HashMap<String, Vec<ScriptStep>>,
    default: Vec<ScriptStep>,
}

impl ScriptedGenerator {
    pub fn new(default: Vec<ScriptStep>) -> Self {
        Self {
            by_utterance: HashMap::new(),
            default,
        }
    }

    pub fn on(mut self, user_text: &str, steps: Vec<ScriptStep>) -> Self {
        self.by_utterance
            .insert(crate::nlp::normalize_asr(user_text), steps);
        self
    }

    fn steps_for(&self, request: &GenerateRequest) -> &[ScriptStep] {
        request
            .last_user_text()
            .and_then(|t| self.by_utterance.get(&crate::nlp::normalize_asr(t)))
            .unwrap_or(&self.default)
    }
}

#[async_trait]
impl RemoteGenerator for ScriptedGenerator {
    async fn generate(
        &self,
        request: &GenerateRequest,
        attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError> {
        let steps = self.steps_for(request);
        let Some(step) = (!steps.is_empty()).then(|| &steps[attempt % steps.len()]) else {
            return Err(GeneratorError::Invocation("no scripted reply".into()));
        };
        tokio::time::sleep(Duration::from_millis(step.latency_ms)).await;
        match &step.text {
            Some(text) => Ok(GenerateResponse { text: text.clone() }),
            None => Err(GeneratorError::Invocation("scripted failure".into())),
        }
    }
}

/// Pseudo-random latencies and failures derived from (seed, request,
/// attempt), so repeated runs see the same schedule.
#[derive(Debug, Clone)]
pub struct RandomLatencyGenerator {
    pub seed: u64,
    pub min_ms: u64,
    pub max_ms: u64,
    pub failure_rate: f64,
    pub replies: Vec<String>,
}

#[async_trait]
impl RemoteGenerator for RandomLatencyGenerator {
    async fn generate(
        &self,
        request: &GenerateRequest,
        attempt: usize,
    ) -> Result<GenerateResponse, GeneratorError> {
        let key = serde_json::to_vec(request).unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed ^ attempt as u64, &key));
        let ms = rng.random_range(self.min_ms..=self.max_ms.max(self.min_ms));
        let fails = rng.random_bool(self.failure_rate.clamp(0.0, 1.0));
        tokio::time::sleep(Duration::from_millis(ms)).await;
        if fails || self.replies.is_empty() {
            return Err(GeneratorError::Invocation("random failure".into()));
        }
        let text = self.replies[rng.random_range(0..self.replies.len())].clone();
        Ok(GenerateResponse { text })
    }
}
