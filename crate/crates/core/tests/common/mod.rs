#![allow(dead_code)]

pub mod assembly;
pub mod fuzz;
pub mod hedge;
pub mod oracles;
pub mod walker;

use std::path::PathBuf;
use std::sync::Arc;

use genrank::dialogue::UserProfile;
use genrank::service::{
    parse_transcript, scripted_remotes, transcript_scores, Engine, EngineConfig, MemoryStore, Resources,
    SessionStore, TranscriptLine, VirtualClock,
};

pub const GOLDEN_SESSION: &str = "table1";
pub const GOLDEN_LATENCY_MS: u64 = 300;
pub const DISTRACTOR: &str = "Tell me more about that.";

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn config() -> EngineConfig {
    EngineConfig::load(&data_dir().join("engine.toml")).unwrap()
}

pub fn table1() -> Vec<TranscriptLine> {
    parse_transcript(&std::fs::read_to_string(data_dir().join("transcripts/table1.jsonl")).unwrap()).unwrap()
}

pub fn today() -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(2021, 6, 20).unwrap()
}

/// The sample config on a virtual clock at 2021-06-20 18:00 UTC.
/// Must be called inside a paused tokio runtime.
pub fn engine_with(config: EngineConfig, edit: impl FnOnce(&mut Resources)) -> (Engine, Arc<MemoryStore>) {
    let clock = Arc::new(VirtualClock::at(today(), 18));
    let (mut res, _) = Resources::load(&config, today()).unwrap();
    edit(&mut res);
    let store = Arc::new(MemoryStore::new());
    (Engine::new(config, res, clock, store.clone()), store)
}

/// Remotes scripted to the golden transcript, fixture scores favoring them,
/// and a returning user named simpson.
pub fn golden_engine() -> (Engine, Arc<MemoryStore>) {
    let cfg = config();
    let lines = table1();
    let remotes: Vec<_> = cfg.generators.iter().map(|g| (g.name.clone(), g.policy())).collect();
    let (engine, store) = engine_with(cfg, |res| {
        res.replace_remotes(scripted_remotes(&lines, &remotes, GOLDEN_LATENCY_MS, DISTRACTOR).unwrap())
            .unwrap();
        res.poly = Arc::new(transcript_scores(&lines));
    });
    let mut p = UserProfile::new("simpson-user");
    p.name = Some("simpson".into());
    store.save_profile(&p).unwrap();
    (engine, store)
}
