//! Latency percentiles and selection tallies over recorded turn traces.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::engine::{Route, TurnTrace};

/// Nearest-rank percentile of ascending `sorted`; 0 when empty.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub p50: u64,
    pub p95: u64,
    pub max: u64,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<u64>) -> Self {
        samples.sort_unstable();
        Self {
            count: samples.len(),
            p50: percentile(&samples, 50.0),
            p95: percentile(&samples, 95.0),
            max: samples.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub turns: usize,
    pub turn_latency: LatencyStats,
    pub stages: BTreeMap<String, LatencyStats>,
    /// Per-generator wall time inside the fan-out.
    pub generators: BTreeMap<String, LatencyStats>,
    /// Winning generator per ranked turn; sums to `ranked_turns`.
    pub selection_counts: BTreeMap<String, usize>,
    pub ranked_turns: usize,
    pub route_counts: BTreeMap<Route, usize>,
    /// Turns where the overall budget cut a generator short.
    pub budget_timeouts: usize,
    /// Abandoned invocations per generator.
    pub generator_timeouts: BTreeMap<String, usize>,
}

impl MetricsReport {
    pub fn from_traces(traces: &[TurnTrace]) -> Self {
        let mut stages: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut generators: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        let mut r = MetricsReport {
            turns: traces.len(),
            ..Default::default()
        };
        for t in traces {
            for s in &t.spans {
                stages.entry(s.stage.clone()).or_default().push(s.duration_ms);
            }
            for run in &t.runs {
                generators.entry(run.name.clone()).or_default().push(run.elapsed_ms);
                if run.timed_out > 0 {
                    *r.generator_timeouts.entry(run.name.clone()).or_default() += run.timed_out;
                }
            }
            *r.route_counts.entry(t.route).or_default() += 1;
            if t.route == Route::Ranked {
                r.ranked_turns += 1;
                *r.selection_counts.entry(t.source.clone()).or_default() += 1;
            }
            r.budget_timeouts += usize::from(t.budget_clipped);
        }
        r.turn_latency = LatencyStats::from_samples(traces.iter().map(|t| t.total_ms).collect());
        r.stages = stages.into_iter().map(|(k, v)| (k, LatencyStats::from_samples(v))).collect();
        r.generators = generators.into_iter().map(|(k, v)| (k, LatencyStats::from_samples(v))).collect();
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Fixed-width plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, s: &LatencyStats| {
            let _ = writeln!(out, "{name:<24} {:>7} {:>8} {:>8} {:>8}", s.count, s.p50, s.p95, s.max);
        };
        let _ = writeln!(out, "{:<24} {:>7} {:>8} {:>8} {:>8}", "latency (ms)", "n", "p50", "p95", "max");
        row(&mut out, "turn", &self.turn_latency);
        for (k, s) in &self.stages {
            row(&mut out, &format!("stage:{k}"), s);
        }
        for (k, s) in &self.generators {
            row(&mut out, &format!("gen:{k}"), s);
        }
        let _ = writeln!(out, "\nselections ({} ranked turns)", self.ranked_turns);
        for (k, n) in &self.selection_counts {
            let _ = writeln!(out, "  {k:<22} {n:>7}");
        }
        let _ = writeln!(out, "\nbudget-clipped turns {:>11}", self.budget_timeouts);
        let _ = writeln!(out, "abandoned generator calls");
        for (k, n) in &self.generator_timeouts {
            let _ = writeln!(out, "  {k:<22} {n:>7}");
        }
        out
    }
}
