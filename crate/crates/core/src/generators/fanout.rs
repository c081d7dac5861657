//! Hedged concurrent invocation with a deadline and a completion quorum.
//!
//! All timing goes through `tokio::time`, so a runtime started with paused
//! time acts as a virtual clock: sleeps resolve instantly in deadline order
//! and `Instant::now()` advances deterministically.

use std::future::Future;
use std::time::Duration;

use futures::stream::{FuturesUnordered, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::GeneratorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanoutPolicy {
    pub n_calls: u32,
    #[serde(default = "one")]
    pub hedge_factor: u32,
    pub deadline_ms: u64,
    #[serde(default = "full")]
    pub min_complete_fraction: f64,
}

fn one() -> u32 {
    1
}

fn full() -> f64 {
    1.0
}

impl FanoutPolicy {
    pub fn new(n_calls: u32, hedge_factor: u32, deadline_ms: u64, min_complete_fraction: f64) -> Self {
        Self {
            n_calls,
            hedge_factor,
            deadline_ms,
            min_complete_fraction,
        }
    }

    /// One call, no hedging.
    pub fn single(deadline_ms: u64) -> Self {
        Self::new(1, 1, deadline_ms, 1.0)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.n_calls == 0 || self.hedge_factor == 0 || self.deadline_ms == 0 {
            return Err(GeneratorError::Config(
                "n_calls, hedge_factor and deadline_ms must be positive".into(),
            ));
        }
        if !(self.min_complete_fraction > 0.0 && self.min_complete_fraction <= 1.0) {
            return Err(GeneratorError::Config(format!(
                "min_complete_fraction {} outside (0, 1]",
                self.min_complete_fraction
            )));
        }
        Ok(())
    }

    pub fn total_invocations(&self) -> usize {
        (self.n_calls * self.hedge_factor) as usize
    }

    /// Successful completions after which the fan-out proceeds.
    pub fn proceed_threshold(&self) -> usize {
        let total = self.total_invocations();
        // the epsilon keeps 4 * 0.5 from rounding up to 3 through float noise
        ((total as f64 * self.min_complete_fraction) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub invocation: usize,
    pub latency_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HedgeOutcome {
    /// Successful completions in arrival order; simultaneous arrivals are
    /// ordered by invocation index.
    pub completions: Vec<Completion>,
    pub failures: Vec<(usize, String)>,
    /// Invocations still outstanding when the fan-out stopped.
    pub abandoned: usize,
    pub deadline_hit: bool,
    pub elapsed_ms: u64,
}

/// Issues `policy.total_invocations()` concurrent calls and collects
/// successes until the quorum is met, every call has finished, or
/// `deadline_ms` elapses. Late results are dropped with their futures.
pub async fn hedged_invoke<F, Fut>(policy: &FanoutPolicy, deadline_ms: u64, invoke: F) -> HedgeOutcome
where
    F: Fn(usize) -> Fut,
    Fut: Future<Output = Result<String, GeneratorError>>,
{
    let start = Instant::now();
    let deadline = start + Duration::from_millis(deadline_ms);
    let total = policy.total_invocations();
    let threshold = policy.proceed_threshold();

    let mut pending: FuturesUnordered<_> = (0..total)
        .map(|i| {
            let fut = invoke(i);
            async move { (i, fut.await) }
        })
        .collect();

    let mut outcome = HedgeOutcome::default();
    let mut finished = 0;
    while finished < total && outcome.completions.len() < threshold {
        match tokio::time::timeout_at(deadline, pending.next()).await {
            Ok(Some((i, result))) => {
                finished += 1;
                let now = Instant::now();
                if now > deadline {
                    outcome.deadline_hit = true;
                    break;
                }
                match result {
                    Ok(text) => outcome.completions.push(Completion {
                        invocation: i,
                        latency_ms: ms_between(start, now).min(deadline_ms),
                        text,
                    }),
                    Err(e) => outcome.failures.push((i, e.to_string())),
                }
            }
            Ok(None) => break,
            Err(_) => {
                outcome.deadline_hit = true;
                break;
            }
        }
    }
    outcome.abandoned = total - finished;
    outcome.elapsed_ms = ms_between(start, Instant::now());
    outcome
        .completions
        .sort_by_key(|c| (c.latency_ms, c.invocation));
    outcome
}

pub(crate) fn ms_between(a: Instant, b: Instant) -> u64 {
    b.saturating_duration_since(a).as_millis() as u64
}
