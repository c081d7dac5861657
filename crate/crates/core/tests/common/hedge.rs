use std::sync::Arc;
use std::time::Duration;

use genrank::dialogue::{DialogueHistory, Turn};
use genrank::generators::{hedged_invoke, FanoutPolicy, ScriptStep, ScriptedGenerator, TurnContext};
use genrank::nlp::{IntentResult, Utterance};

pub fn ctx() -> TurnContext {
    let mut h = DialogueHistory::new();
    h.push(Turn::user("hello there")).unwrap();
    TurnContext::new(h, Utterance::new("hello there", 0), IntentResult::none())
}

pub fn scripted(latencies: &[u64]) -> ScriptedGenerator {
    ScriptedGenerator::new(
        latencies
            .iter()
            .enumerate()
            .map(|(i, &ms)| ScriptStep::ok(ms, format!("reply {i}")))
            .collect(),
    )
}

/// Time at which a policy stops waiting, given per-invocation latencies.
pub async fn completion_time(policy: FanoutPolicy, latencies: Vec<u64>) -> u64 {
    let lat = Arc::new(latencies);
    let out = hedged_invoke(&policy, policy.deadline_ms, |i| {
        let lat = lat.clone();
        async move {
            tokio::time::sleep(Duration::from_millis(lat[i])).await;
            Ok(format!("r{i}"))
        }
    })
    .await;
    out.elapsed_ms
}
