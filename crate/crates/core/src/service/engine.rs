//! Per-session turn handling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::metrics::MetricsReport;
use super::store::{SessionEvent, SessionStore};
use super::{Clock, EngineConfig, Resources, Selector, ServiceError};
use crate::dialogue::{DialogueHistory, Turn, UserProfile};
use crate::fsm::{self, DiscussedMemory, FsmRuntimeState, StepFeatures, StepResult};
use crate::generators::rules::{is_sensitive_intent, launch_response, sensitive_response};
use crate::generators::{fan_out, seeded_index, GeneratorKind, GeneratorRun, TurnContext};
use crate::guardrails::{fnv1a, RepetitionMemory, Verdict};
use crate::nlp::{EntityMention, IntentResult, Utterance};
use crate::ranker::rank;

/// Source tag of the global stop/pre-stop handler and the discomfort reply.
pub const RULE_SOURCE: &str = "RULE-BASED";
/// Source tag of the empty-pool topic suggestion.
pub const TOPIC_PROMPT_SOURCE: &str = "TOPIC_PROMPT";

const STOP_INTENT: &str = "stop";
const PRESTOP_INTENT: &str = "prestop";

/// Which pipeline branch produced the response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Stop,
    Prestop,
    Discomfort,
    Sensitive,
    Launch,
    Fsm,
    Ranked,
    TopicPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub stage: String,
    /// Offset from the start of the turn.
    pub start_ms: u64,
    pub duration_ms: u64,
}

/// One fan-out candidate as the turn saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub text: String,
    pub source: String,
    pub kind: GeneratorKind,
    pub latency_ms: u64,
    pub verdicts: Vec<Verdict>,
    pub survived: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnTrace {
    pub turn_index: usize,
    pub user_text: String,
    pub intent: String,
    pub route: Route,
    pub response: String,
    pub source: String,
    /// Egress state of the domain machine after this turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsm_state: Option<String>,
    pub spans: Vec<Span>,
    pub candidates: Vec<CandidateView>,
    pub runs: Vec<GeneratorRun>,
    /// Budget handed to the fan-out, when it ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_ms: Option<u64>,
    /// A generator was cut off by the turn budget rather than its own deadline.
    pub budget_clipped: bool,
    pub total_ms: u64,
}

impl TurnTrace {
    pub fn chosen(&self) -> Option<&CandidateView> {
        self.candidates
            .iter()
            .find(|c| c.survived && c.text == self.response && c.source == self.source)
    }

    pub fn timeouts(&self) -> usize {
        self.runs.iter().map(|r| r.timed_out).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub response: String,
    pub source: String,
    pub route: Route,
    pub session_ended: bool,
    pub trace: TurnTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub user_id: String,
    pub turns: usize,
    pub mean_latency_ms: f64,
    pub max_latency_ms: u64,
    /// Winning generator per ranked turn.
    pub selection_counts: BTreeMap<String, usize>,
    pub route_counts: BTreeMap<Route, usize>,
    pub traces: Vec<TurnTrace>,
}

struct Session {
    id: String,
    user_id: String,
    profile: UserProfile,
    profile_dirty: bool,
    history: DialogueHistory,
    memory: RepetitionMemory,
    fsm: Option<FsmRuntimeState>,
    /// What earlier engagements left behind, per domain.
    domain_memory: HashMap<String, DiscussedMemory>,
    spoken: HashSet<String>,
    selector: Selector,
    traces: Vec<TurnTrace>,
    pending: Vec<SessionEvent>,
    ended: bool,
}

/// Shared orchestrator. Sessions are independent; turns within one session
/// are serialized by its lock.
pub struct Engine {
    pub res: Resources,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    store: Arc<dyn SessionStore>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    traces: Mutex<Vec<TurnTrace>>,
    counter: AtomicU64,
}

struct Stopwatch {
    start: Instant,
    spans: Vec<Span>,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            spans: Vec::new(),
        }
    }

    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    fn record(&mut self, stage: &str, since: u64) {
        let now = self.elapsed_ms();
        self.spans.push(Span {
            stage: stage.to_owned(),
            start_ms: since,
            duration_ms: now - since,
        });
    }
}

struct Decision {
    text: String,
    source: String,
    route: Route,
    knowledge_id: Option<String>,
}

impl Decision {
    fn new(text: &str, source: &str, route: Route) -> Self {
        Self {
            text: text.to_owned(),
            source: source.to_owned(),
            route,
            knowledge_id: None,
        }
    }
}

fn pick<'a>(options: &'a [String], seed: u64, fallback: &'a str) -> &'a str {
    if options.is_empty() {
        fallback
    } else {
        &options[seeded_index(seed, options.len())]
    }
}

impl Engine {
    pub fn new(config: EngineConfig, res: Resources, clock: Arc<dyn Clock>, store: Arc<dyn SessionStore>) -> Self {
        Self {
            res,
            config,
            clock,
            store,
            sessions: Mutex::new(HashMap::new()),
            traces: Mutex::new(Vec::new()),
            counter: AtomicU64::new(0),
        }
    }

    /// Loads resources as of the clock's current day. Ingest problems are
    /// logged, not fatal.
    pub fn from_config(
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        store: Arc<dyn SessionStore>,
    ) -> Result<Self, ServiceError> {
        let today = crate::knowledge::date_of(clock.now_ms());
        let (res, reports) = Resources::load(&config, today)?;
        for r in reports {
            for (line, why) in r.rejected.iter().chain(&r.errors) {
                tracing::warn!(line, %why, "feed line not stored");
            }
        }
        Ok(Self::new(config, res, clock, store))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<dyn SessionStore> {
        &self.store
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ServiceError> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_owned()))
    }

    /// Opens a session, loading the user's profile. A fresh id is minted
    /// when `session_id` is `None`.
    pub async fn create_session(&self, user_id: &str, session_id: Option<&str>) -> Result<String, ServiceError> {
        let now = self.clock.now_ms();
        let id = match session_id {
            Some(id) => id.to_owned(),
            None => {
                let n = self.counter.fetch_add(1, Ordering::SeqCst);
                format!("s{:016x}", fnv1a(self.config.seed ^ n, format!("{user_id}:{now}").as_bytes()))
            }
        };
        let profile = match self.store.load_profile(user_id) {
            Ok(p) => p.unwrap_or_else(|| UserProfile::new(user_id)),
            Err(e) => {
                tracing::warn!(error = %e, "profile load failed; treating user as new");
                UserProfile::new(user_id)
            }
        };
        let mut session = Session {
            id: id.clone(),
            user_id: user_id.to_owned(),
            profile,
            profile_dirty: false,
            history: DialogueHistory::new(),
            memory: RepetitionMemory::new(),
            fsm: None,
            domain_memory: HashMap::new(),
            spoken: HashSet::new(),
            selector: self.config.selector,
            traces: Vec::new(),
            pending: vec![SessionEvent::Started {
                session_id: id.clone(),
                user_id: user_id.to_owned(),
                selector: self.config.selector,
                at_ms: now,
            }],
            ended: false,
        };
        {
            let mut map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
            if map.contains_key(&id) {
                return Err(ServiceError::DuplicateSession(id));
            }
            self.flush(&mut session);
            map.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
        }
        Ok(id)
    }

    pub async fn set_selector(&self, session_id: &str, selector: Selector) -> Result<(), ServiceError> {
        self.session(session_id)?.lock().await.selector = selector;
        Ok(())
    }

    pub async fn history(&self, session_id: &str) -> Result<DialogueHistory, ServiceError> {
        Ok(self.session(session_id)?.lock().await.history.clone())
    }

    pub async fn profile(&self, session_id: &str) -> Result<UserProfile, ServiceError> {
        Ok(self.session(session_id)?.lock().await.profile.clone())
    }

    /// Pending log events not yet accepted by the store.
    pub async fn pending_events(&self, session_id: &str) -> Result<usize, ServiceError> {
        Ok(self.session(session_id)?.lock().await.pending.len())
    }

    fn flush(&self, s: &mut Session) {
        while let Some(event) = s.pending.first() {
            match self.store.append(&s.id, event) {
                Ok(()) => {
                    s.pending.remove(0);
                }
                Err(e) => {
                    tracing::warn!(session = %s.id, error = %e, "persist failed; will retry");
                    break;
                }
            }
        }
        if s.profile_dirty {
            match self.store.save_profile(&s.profile) {
                Ok(()) => s.profile_dirty = false,
                Err(e) => tracing::warn!(user = %s.user_id, error = %e, "profile save failed; will retry"),
            }
        }
    }

    pub async fn handle_turn(&self, session_id: &str, user_text: &str) -> Result<TurnOutput, ServiceError> {
        if user_text.trim().is_empty() {
            return Err(ServiceError::EmptyText);
        }
        let arc = self.session(session_id)?;
        let mut s = arc.lock().await;
        if s.ended {
            return Err(ServiceError::SessionEnded(session_id.to_owned()));
        }
        let mut sw = Stopwatch::new();
        let now_ms = self.clock.now_ms();
        let today = crate::knowledge::date_of(now_ms);
        let turn_index = s.history.bot_turns();
        let seed = fnv1a(self.config.seed, format!("{}:{turn_index}", s.id).as_bytes());
        let utterance = Utterance::new(user_text, now_ms);
        let res = &self.res;

        let t = sw.elapsed_ms();
        let intent = res.classifier.classify(&utterance);
        sw.record("intent", t);

        let mut candidates: Vec<CandidateView> = Vec::new();
        let mut runs = Vec::new();
        let mut envelope_ms = None;
        let mut budget_clipped = false;
        let mut entities: Vec<EntityMention> = Vec::new();

        let mut history = s.history.clone();
        let decision = if intent.is(STOP_INTENT) {
            Decision::new(&res.templates.farewell, RULE_SOURCE, Route::Stop)
        } else if intent.is(PRESTOP_INTENT) {
            Decision::new(&res.templates.prestop, RULE_SOURCE, Route::Prestop)
        } else {
            let t = sw.elapsed_ms();
            let screen = res.guardrails.screen_user(&utterance.raw_text);
            sw.record("user_screen", t);
            if !screen.passed {
                let text = pick(&res.templates.discomfort, seed, &res.templates.prestop);
                Decision::new(text, RULE_SOURCE, Route::Discomfort)
            } else {
                let t = sw.elapsed_ms();
                entities = res.gazetteer.recognize(&utterance);
                let topic = res.topics.detect(&utterance.raw_text).map(str::to_owned);
                sw.record("features", t);
                history
                    .push(user_turn(user_text, &utterance, &intent, &entities))
                    .map_err(|e| ServiceError::Storage(e.to_string()))?;

                let routed = self.route_rules(&mut s, turn_index, &utterance, &intent);
                let routed = match routed {
                    Some(d) => Some(d),
                    None => {
                        let t = sw.elapsed_ms();
                        let d = self.route_fsm(&mut s, &utterance, &intent, &entities, today, seed);
                        sw.record("fsm", t);
                        d
                    }
                };
                match routed {
                    Some(d) => d,
                    None => {
                        let mut ctx = TurnContext::new(history.clone(), utterance.clone(), intent.clone());
                        ctx.entities = entities.clone();
                        ctx.topic = topic;
                        ctx.turn_index = turn_index;
                        ctx.seed = seed;
                        ctx.spoken_headlines = s.spoken.clone();
                        ctx.now_ms = now_ms;
                        ctx.knowledge = res
                            .knowledge
                            .query(&ctx.entities, ctx.topic.as_deref(), today)
                            .into_iter()
                            .map(|(item, _)| item.headline)
                            .find(|h| !s.spoken.contains(h));

                        let envelope = self
                            .config
                            .turn_deadline_ms
                            .saturating_sub(sw.elapsed_ms() + self.config.reserve_ms);
                        envelope_ms = Some(envelope);
                        let t = sw.elapsed_ms();
                        let report = if envelope == 0 {
                            Default::default()
                        } else {
                            fan_out(&ctx, &res.registry, envelope).await
                        };
                        sw.record("fanout", t);
                        budget_clipped = report.runs.iter().any(|r| {
                            r.timed_out > 0
                                && res
                                    .registry
                                    .specs()
                                    .iter()
                                    .any(|spec| spec.name == r.name && spec.policy.deadline_ms > envelope)
                        });
                        runs = report.runs;

                        let t = sw.elapsed_ms();
                        let (survivors, audit) = res.guardrails.apply_all(report.candidates, &s.memory);
                        sw.record("guardrails", t);
                        candidates = audit
                            .into_iter()
                            .map(|a| CandidateView {
                                survived: a.survived(),
                                text: a.candidate.text,
                                source: a.candidate.source,
                                kind: a.candidate.kind,
                                latency_ms: a.candidate.latency_ms,
                                verdicts: a.verdicts,
                                score: None,
                            })
                            .collect();

                        let t = sw.elapsed_ms();
                        let d = self.select(&s, &history, survivors, &mut candidates, seed);
                        sw.record("rank", t);
                        d
                    }
                }
            }
        };

        // commit
        let t = sw.elapsed_ms();
        if history.len() == s.history.len() {
            history
                .push(user_turn(user_text, &utterance, &intent, &entities))
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
        let mut bot = Turn::bot(decision.text.clone(), decision.source.clone());
        bot.timestamp = self.clock.now_ms();
        history.push(bot.clone()).map_err(|e| ServiceError::Storage(e.to_string()))?;
        s.history = history;
        s.memory.remember(&decision.text, turn_index, res.embedder.as_ref());
        if let Some(item) = decision.knowledge_id.as_deref().and_then(|id| res.knowledge.get(id)) {
            s.spoken.insert(item.headline);
        }
        if s.profile.last_seen != now_ms {
            s.profile.last_seen = now_ms;
            s.profile_dirty = true;
        }
        let ended = decision.route == Route::Stop;
        let user = s.history.turns()[s.history.len() - 2].clone();
        let mut trace = TurnTrace {
            turn_index,
            user_text: user_text.to_owned(),
            intent: intent.intent_name.clone(),
            route: decision.route,
            response: decision.text.clone(),
            source: decision.source.clone(),
            fsm_state: s.fsm.as_ref().map(|f| format!("{}:{}", f.domain, f.current_egress)),
            spans: Vec::new(),
            candidates,
            runs,
            envelope_ms,
            budget_clipped,
            total_ms: 0,
        };
        // the logged copy is timed up to persistence; the returned one includes it
        trace.spans = sw.spans.clone();
        trace.total_ms = sw.elapsed_ms();
        s.pending.push(SessionEvent::Turn {
            user,
            bot,
            trace: Box::new(trace.clone()),
        });
        if ended {
            s.ended = true;
            s.fsm = None;
            s.pending.push(SessionEvent::Ended { at_ms: now_ms });
        }
        self.flush(&mut s);
        sw.record("persist", t);
        trace.spans = sw.spans.clone();
        trace.total_ms = sw.elapsed_ms();
        s.traces.push(trace.clone());
        self.traces.lock().unwrap_or_else(|e| e.into_inner()).push(trace.clone());
        Ok(TurnOutput {
            response: decision.text,
            source: decision.source,
            route: decision.route,
            session_ended: ended,
            trace,
        })
    }

    /// Sensitive deflection and the launch greeting, both bypassing ranking.
    fn route_rules(
        &self,
        s: &mut Session,
        turn_index: usize,
        utterance: &Utterance,
        intent: &IntentResult,
    ) -> Option<Decision> {
        let templates = &self.res.templates;
        if is_sensitive_intent(intent) {
            if let Some(c) = sensitive_response(intent, templates) {
                return Some(Decision::new(&c.text, &c.source, Route::Sensitive));
            }
        }
        let before = s.profile.name.clone();
        let c = launch_response(&mut s.profile, turn_index, utterance, &templates.launch)?;
        if s.profile.name != before {
            s.profile_dirty = true;
        }
        Some(Decision::new(&c.text, &c.source, Route::Launch))
    }

    fn route_fsm(
        &self,
        s: &mut Session,
        utterance: &Utterance,
        intent: &IntentResult,
        entities: &[EntityMention],
        today: chrono::NaiveDate,
        seed: u64,
    ) -> Option<Decision> {
        let defs = self.res.fsms.as_slice();
        let name = s.profile.name.clone();
        let features = StepFeatures {
            utterance,
            intent,
            entities,
            profile_name: name.as_deref(),
            today,
        };
        let store = Some(self.res.knowledge.as_ref());
        let mut result = None;
        if let Some(rt) = s.fsm.take() {
            if let Some(def) = defs.iter().find(|d| d.domain == rt.domain) {
                match fsm::step(def, &rt, features, store, seed) {
                    r @ StepResult::Response { .. } => result = Some((def, r)),
                    StepResult::SteerAway => {
                        s.spoken.extend(rt.spoken_headlines);
                        s.domain_memory.insert(rt.domain, rt.discussed);
                    }
                }
            }
        }
        if result.is_none() {
            if let Some((def, _, _)) = fsm::try_enter(features, defs) {
                let memory = s.domain_memory.remove(&def.domain).unwrap_or_default();
                let spoken: BTreeSet<String> = s.spoken.iter().cloned().collect();
                match fsm::enter(def, features, memory.clone(), spoken, store, seed) {
                    r @ StepResult::Response { .. } => result = Some((def, r)),
                    StepResult::SteerAway => {
                        s.domain_memory.insert(def.domain.clone(), memory);
                    }
                }
            }
        }
        let (def, StepResult::Response { response, runtime }) = result? else {
            return None;
        };
        s.spoken.extend(runtime.spoken_headlines.iter().cloned());
        s.fsm = Some(runtime);
        Some(Decision {
            text: response.text,
            source: def.source_name(),
            route: Route::Fsm,
            knowledge_id: response.knowledge_id,
        })
    }

    fn select(
        &self,
        s: &Session,
        history: &DialogueHistory,
        survivors: Vec<crate::generators::Candidate>,
        views: &mut [CandidateView],
        seed: u64,
    ) -> Decision {
        if survivors.is_empty() {
            let templates = &self.res.templates;
            let text = pick(&templates.topic_prompts, seed, &templates.prestop);
            return Decision::new(text, TOPIC_PROMPT_SOURCE, Route::TopicPrompt);
        }
        let texts: Vec<String> = history.texts().map(str::to_owned).collect();
        let scorer = self.res.scorer(s.selector);
        let ranked = match rank(&texts, survivors.clone(), scorer, &self.res.priority) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "ranking failed; keeping arrival order");
                survivors
                    .into_iter()
                    .map(|candidate| crate::ranker::Ranked {
                        candidate,
                        score: f64::NEG_INFINITY,
                    })
                    .collect()
            }
        };
        for r in &ranked {
            if let Some(v) = views
                .iter_mut()
                .find(|v| v.survived && v.score.is_none() && v.text == r.candidate.text && v.source == r.candidate.source)
            {
                v.score = Some(r.score);
            }
        }
        let best = &ranked[0].candidate;
        Decision {
            text: best.text.clone(),
            source: best.source.clone(),
            route: Route::Ranked,
            knowledge_id: best.knowledge_used.clone(),
        }
    }

    /// Closes the session, flushes its log and returns the aggregate.
    pub async fn end_session(&self, session_id: &str) -> Result<SessionSummary, ServiceError> {
        let arc = self.session(session_id)?;
        let mut s = arc.lock().await;
        if !s.ended {
            s.ended = true;
            let at_ms = self.clock.now_ms();
            s.pending.push(SessionEvent::Ended { at_ms });
        }
        self.flush(&mut s);
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).remove(session_id);
        Ok(summarize(&s.id, &s.user_id, &s.traces))
    }

    /// Report over the last `window` turns across all sessions (all turns when `None`).
    pub fn metrics_report(&self, window: Option<usize>) -> MetricsReport {
        let traces = self.traces.lock().unwrap_or_else(|e| e.into_inner());
        let from = window.map_or(0, |w| traces.len().saturating_sub(w));
        MetricsReport::from_traces(&traces[from..])
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

fn user_turn(text: &str, utterance: &Utterance, intent: &IntentResult, entities: &[EntityMention]) -> Turn {
    let mut t = Turn::user(text);
    t.timestamp = utterance.timestamp;
    t.intent = Some(intent.intent_name.clone());
    t.entities = entities.to_vec();
    t
}

pub(crate) fn summarize(session_id: &str, user_id: &str, traces: &[TurnTrace]) -> SessionSummary {
    let mut selection_counts = BTreeMap::new();
    let mut route_counts = BTreeMap::new();
    for t in traces {
        *route_counts.entry(t.route).or_insert(0) += 1;
        if t.route == Route::Ranked {
            *selection_counts.entry(t.source.clone()).or_insert(0) += 1;
        }
    }
    let n = traces.len();
    SessionSummary {
        session_id: session_id.to_owned(),
        user_id: user_id.to_owned(),
        turns: n,
        mean_latency_ms: if n == 0 {
            0.0
        } else {
            traces.iter().map(|t| t.total_ms as f64).sum::<f64>() / n as f64
        },
        max_latency_ms: traces.iter().map(|t| t.total_ms).max().unwrap_or(0),
        selection_counts,
        route_counts,
        traces: traces.to_vec(),
    }
}
