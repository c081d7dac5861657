//! The turn orchestrator and everything around it: configuration, session
//! persistence, latency metrics, selector comparison and the HTTP API.

mod clock;
mod compare;
mod config;
mod engine;
pub mod http;
mod metrics;
mod replay;
mod store;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use compare::{ab_selector_compare, recorded_turns, CompareReport, PickRow, RecordedTurn};
pub use config::{
    local_generators, EngineConfig, MockSpec, Paths, QaAnswer, QaConfig, RemoteConfig, Resources, Selector,
    CONFIG_ENV, DEFAULT_TURN_DEADLINE_MS, FALLBACK_NAME, FAVORITE_NAME, MAX_TURN_DEADLINE_MS, QA_NAME,
};
pub use engine::{
    CandidateView, Engine, Route, SessionSummary, Span, TurnOutput, TurnTrace, RULE_SOURCE, TOPIC_PROMPT_SOURCE,
};
pub use metrics::{percentile, LatencyStats, MetricsReport};
pub use replay::{
    exchanges, parse_transcript, replay, scripted_remotes, transcript_scores, Exchange, ReplayReport, ReplayRow,
    TranscriptLine, USER_SOURCE,
};
pub use store::{replay_history, FileStore, MemoryStore, SessionEvent, SessionStore};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session `{0}` already exists")]
    DuplicateSession(String),
    #[error("session `{0}` has ended")]
    SessionEnded(String),
    #[error("user text is empty")]
    EmptyText,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(String),
}
