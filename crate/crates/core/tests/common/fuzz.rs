use std::sync::Arc;

use genrank::generators::{FanoutPolicy, GeneratorSpec, RandomLatencyGenerator};
use genrank::service::ServiceError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{config, engine_with};

pub fn fuzz_text(rng: &mut ChaCha8Rng) -> String {
    const WORDS: &[&str] = &[
        "yes", "no", "movies", "lets", "talk", "about", "sports", "music", "what", "is", "your", "favorite",
        "color", "deadpool", "two", "hamilton", "i", "love", "thrillers", "goodbye", "stop", "messi", "stocks",
        "should", "invest", "damn", "the", "the the the", "who", "are", "you", "?", "!!", "é", "🙂", "vegas",
    ];
    match rng.random_range(0..4) {
        0 => (0..rng.random_range(1..30)).map(|_| rng.random_range(b' '..=b'~') as char).collect(),
        1 => (0..rng.random_range(1..8)).map(|_| char::from_u32(rng.random_range(0x20..0x2fff)).unwrap_or('x')).collect(),
        _ => (0..rng.random_range(1..12))
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" "),
    }
}

#[derive(Debug)]
pub struct LivenessStats {
    pub answered: usize,
    pub worst_ms: u64,
    pub deadline_ms: u64,
    pub budget_timeouts: usize,
}

/// Drives fuzzed turns through the sample engine with four flaky remotes.
/// Must be called inside a paused tokio runtime.
pub async fn liveness_run(turns: usize, seed: u64) -> Result<LivenessStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let remotes: Vec<GeneratorSpec> = (0..4)
        .map(|k| {
            GeneratorSpec::remote(
                &format!("R{k}"),
                FanoutPolicy::new(rng.random_range(1..4), rng.random_range(1..3), 2000 + 4000 * k, 0.5),
                Arc::new(RandomLatencyGenerator {
                    seed: k,
                    min_ms: 0,
                    max_ms: 14_000,
                    failure_rate: 0.2 * k as f64,
                    replies: vec![format!("reply from R{k}"), format!("another thought from R{k}")],
                }),
            )
        })
        .collect();
    let (engine, _) = engine_with(config(), |res| res.replace_remotes(remotes).unwrap());
    let deadline = engine.config().turn_deadline_ms;

    let err = |e: ServiceError| e.to_string();
    let mut session = engine.create_session("fuzzer", None).await.map_err(err)?;
    let (mut worst, mut answered) = (0, 0);
    for _ in 0..turns {
        let text = fuzz_text(&mut rng);
        let out = match engine.handle_turn(&session, &text).await {
            Ok(out) => out,
            Err(ServiceError::EmptyText) if text.trim().is_empty() => continue,
            Err(e) => return Err(format!("{e} on {text:?}")),
        };
        if out.response.trim().is_empty() {
            return Err(format!("silence on {text:?}"));
        }
        let span_total: u64 = out.trace.spans.iter().map(|s| s.duration_ms).sum();
        if out.trace.total_ms > deadline || span_total > deadline {
            return Err(format!("{}ms ({span_total}ms in spans) on {text:?}", out.trace.total_ms));
        }
        worst = worst.max(out.trace.total_ms);
        answered += 1;
        if out.session_ended || rng.random_bool(0.02) {
            engine.end_session(&session).await.map_err(err)?;
            session = engine.create_session("fuzzer", None).await.map_err(err)?;
        }
    }
    let m = engine.metrics_report(None);
    if m.selection_counts.values().sum::<usize>() != m.ranked_turns {
        return Err("selection counts do not add up to ranked turns".into());
    }
    Ok(LivenessStats {
        answered,
        worst_ms: worst,
        deadline_ms: deadline,
        budget_timeouts: m.budget_timeouts,
    })
}
