//! Response generators and the per-turn fan-out that runs them.
//!
//! Remote generators are called through [`hedged_invoke`] with their own
//! [`FanoutPolicy`]; local generators (rules, knowledge templates, QA) run
//! inside the same deadline envelope. Output order is registry order, then
//! arrival order within a generator.

mod candidate;
mod fanout;
mod remote;
pub mod rules;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

pub use candidate::{Candidate, GeneratorKind};
pub use fanout::{hedged_invoke, Completion, FanoutPolicy, HedgeOutcome};
pub use remote::{
    EchoGenerator, FailingGenerator, GenerateRequest, GenerateResponse, HttpGenerator,
    RandomLatencyGenerator, RemoteGenerator, ScriptStep, ScriptedGenerator, WireTurn,
};
pub use rules::{
    extract_name, fallback_response, favorite_response, launch_response, qa_candidate,
    sensitive_response, FallbackGenerator, FavoriteGenerator, FixtureQaClient, LaunchTemplates, PersonaEntry, PersonaTable, QaClient,
    QaGenerator, QuestionGate, ResponseTemplates,
};

use crate::dialogue::DialogueHistory;
use crate::nlp::{EntityMention, IntentResult, Utterance};

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("generator config: {0}")]
    Config(String),
    #[error("generator call failed: {0}")]
    Invocation(String),
}

/// Deterministic pick in `0..n` from a seed. `n` must be positive.
pub fn seeded_index(seed: u64, n: usize) -> usize {
    assert!(n > 0, "seeded_index over an empty range");
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Per-turn inputs visible to every generator.
#[derive(Debug, Clone)]
pub struct TurnContext {
    /// History including the current user turn.
    pub history: DialogueHistory,
    pub utterance: Utterance,
    pub intent: IntentResult,
    pub entities: Vec<EntityMention>,
    pub topic: Option<String>,
    /// Bot turns already spoken this session.
    pub turn_index: usize,
    pub seed: u64,
    /// Knowledge headlines already spoken this session.
    pub spoken_headlines: HashSet<String>,
    /// Current time in milliseconds since epoch.
    pub now_ms: i64,
    /// Knowledge snippet appended to requests of knowledge-grounded remotes.
    pub knowledge: Option<String>,
}

impl TurnContext {
    pub fn new(history: DialogueHistory, utterance: Utterance, intent: IntentResult) -> Self {
        Self {
            history,
            now_ms: utterance.timestamp,
            utterance,
            intent,
            entities: Vec::new(),
            topic: None,
            turn_index: 0,
            seed: 0,
            spoken_headlines: HashSet::new(),
            knowledge: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnabledWhen {
    #[default]
    Always,
    Never,
    /// At least one entity was recognized in the utterance.
    HasEntities,
    /// The utterance reads as a question.
    Question,
}

impl EnabledWhen {
    pub fn is_enabled(self, ctx: &TurnContext) -> bool {
        match self {
            EnabledWhen::Always => true,
            EnabledWhen::Never => false,
            EnabledWhen::HasEntities => !ctx.entities.is_empty(),
            EnabledWhen::Question => {
                ctx.utterance.restored_text.ends_with('?')
                    || crate::nlp::has_question_clause(&ctx.utterance.raw_text)
            }
        }
    }
}

/// An in-process generator. May return several candidates.
#[async_trait]
pub trait LocalGenerator: Send + Sync {
    async fn generate(&self, ctx: &TurnContext) -> Vec<Candidate>;
}

#[derive(Clone)]
pub enum Implementation {
    Remote(Arc<dyn RemoteGenerator>),
    Local(Arc<dyn LocalGenerator>),
}

#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub kind: GeneratorKind,
    pub policy: FanoutPolicy,
    pub enabled_when: EnabledWhen,
    pub implementation: Implementation,
    /// Send the turn's knowledge snippet with remote requests.
    pub with_knowledge: bool,
}

impl GeneratorSpec {
    pub fn remote(name: &str, policy: FanoutPolicy, generator: Arc<dyn RemoteGenerator>) -> Self {
        Self {
            name: name.to_owned(),
            kind: GeneratorKind::Remote,
            policy,
            enabled_when: EnabledWhen::Always,
            implementation: Implementation::Remote(generator),
            with_knowledge: false,
        }
    }

    pub fn local(name: &str, kind: GeneratorKind, generator: Arc<dyn LocalGenerator>) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            policy: FanoutPolicy::single(1000),
            enabled_when: EnabledWhen::Always,
            implementation: Implementation::Local(generator),
            with_knowledge: false,
        }
    }

    pub fn enabled_when(mut self, when: EnabledWhen) -> Self {
        self.enabled_when = when;
        self
    }

    pub fn with_knowledge(mut self, on: bool) -> Self {
        self.with_knowledge = on;
        self
    }
}

impl std::fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("policy", &self.policy)
            .field("enabled_when", &self.enabled_when)
            .finish_non_exhaustive()
    }
}

/// Generators in priority-free registry order; names are unique.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    specs: Vec<GeneratorSpec>,
}

impl Registry {
    pub fn new(specs: Vec<GeneratorSpec>) -> Result<Self, GeneratorError> {
        let mut seen = HashSet::new();
        for s in &specs {
            if !seen.insert(s.name.as_str()) {
                return Err(GeneratorError::Config(format!("duplicate generator `{}`", s.name)));
            }
            s.policy.validate()?;
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[GeneratorSpec] {
        &self.specs
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }
}

/// What one generator did during a fan-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRun {
    pub name: String,
    pub elapsed_ms: u64,
    pub candidates: usize,
    pub failures: Vec<String>,
    /// Invocations abandoned at the deadline.
    pub timed_out: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FanoutReport {
    pub candidates: Vec<Candidate>,
    pub runs: Vec<GeneratorRun>,
    pub elapsed_ms: u64,
}

impl FanoutReport {
    pub fn timeouts(&self) -> usize {
        self.runs.iter().map(|r| r.timed_out).sum()
    }
}

/// Runs every enabled generator concurrently. Remote calls are capped by
/// both their own policy deadline and `envelope_ms`; local generators that
/// overrun the envelope contribute nothing.
pub async fn fan_out(ctx: &TurnContext, registry: &Registry, envelope_ms: u64) -> FanoutReport {
    let start = Instant::now();
    let enabled: Vec<&GeneratorSpec> = registry
        .specs
        .iter()
        .filter(|s| s.enabled_when.is_enabled(ctx))
        .collect();

    let runs = futures::future::join_all(enabled.iter().map(|spec| run_one(spec, ctx, envelope_ms))).await;

    let mut report = FanoutReport::default();
    for (cands, run) in runs {
        for mut c in cands {
            c.arrival = report.candidates.len();
            report.candidates.push(c);
        }
        report.runs.push(run);
    }
    report.elapsed_ms = fanout::ms_between(start, Instant::now());
    report
}

async fn run_one(spec: &GeneratorSpec, ctx: &TurnContext, envelope_ms: u64) -> (Vec<Candidate>, GeneratorRun) {
    let start = Instant::now();
    let mut run = GeneratorRun {
        name: spec.name.clone(),
        elapsed_ms: 0,
        candidates: 0,
        failures: Vec::new(),
        timed_out: 0,
    };
    let mut out: Vec<Candidate> = Vec::new();
    match &spec.implementation {
        Implementation::Remote(gen) => {
            let deadline = spec.policy.deadline_ms.min(envelope_ms);
            let knowledge = spec.with_knowledge.then(|| ctx.knowledge.clone()).flatten();
            let request = GenerateRequest::from_history(&ctx.history, knowledge);
            let outcome = hedged_invoke(&spec.policy, deadline, |i| {
                let gen = gen.clone();
                let request = &request;
                async move { gen.generate(request, i).await.map(|r| r.text) }
            })
            .await;
            run.failures = outcome.failures.into_iter().map(|(_, e)| e).collect();
            run.timed_out = outcome.abandoned;
            let mut seen = HashSet::new();
            for c in outcome.completions {
                if let Some(cand) = Candidate::new(&c.text, &spec.name, spec.kind, c.latency_ms) {
                    if seen.insert(cand.text.clone()) {
                        out.push(cand);
                    }
                }
            }
        }
        Implementation::Local(gen) => {
            match tokio::time::timeout(Duration::from_millis(envelope_ms), gen.generate(ctx)).await {
                Ok(cands) => {
                    let latency = fanout::ms_between(start, Instant::now()).min(envelope_ms);
                    let mut seen = HashSet::new();
                    for mut c in cands {
                        if seen.insert(c.text.clone()) {
                            c.source = spec.name.clone();
                            c.latency_ms = latency;
                            out.push(c);
                        }
                    }
                }
                Err(_) => run.timed_out = 1,
            }
        }
    }
    run.candidates = out.len();
    run.elapsed_ms = fanout::ms_between(start, Instant::now());
    (out, run)
}
