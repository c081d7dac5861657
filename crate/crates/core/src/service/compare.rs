//! Offline A/B comparison of two selectors over recorded turns.

use serde::{Deserialize, Serialize};

use super::engine::CandidateView;
use super::store::SessionEvent;
use crate::generators::Candidate;
use crate::ranker::{rank, PriorityTable, RankerError, Scorer};

/// A turn as the selector saw it: the history through the user turn and
/// the candidates that survived the guardrails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedTurn {
    pub history: Vec<String>,
    pub candidates: Vec<CandidateView>,
}

/// Extracts every logged turn from a session event log.
pub fn recorded_turns(events: &[SessionEvent]) -> Vec<RecordedTurn> {
    let mut history = Vec::new();
    let mut out = Vec::new();
    for e in events {
        if let SessionEvent::Turn { user, bot, trace } = e {
            history.push(user.text.clone());
            out.push(RecordedTurn {
                history: history.clone(),
                candidates: trace.candidates.iter().filter(|c| c.survived).cloned().collect(),
            });
            history.push(bot.text.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickRow {
    pub turn: usize,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub compared: usize,
    /// Turns with no candidates to choose from.
    pub skipped: usize,
    pub disagreements: usize,
    pub rate: f64,
    pub picks: Vec<PickRow>,
}

fn top(turn: &RecordedTurn, scorer: &dyn Scorer, priority: &PriorityTable) -> Result<String, RankerError> {
    let cands: Vec<Candidate> = turn
        .candidates
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            Candidate::new(&v.text, &v.source, v.kind, v.latency_ms).map(|mut c| {
                c.arrival = i;
                c
            })
        })
        .collect();
    Ok(rank(&turn.history, cands, scorer, priority)?.remove(0).candidate.text)
}

/// Replays each turn through both selectors and reports where they differ.
pub fn ab_selector_compare(
    turns: &[RecordedTurn],
    a: &dyn Scorer,
    b: &dyn Scorer,
    priority: &PriorityTable,
) -> Result<CompareReport, RankerError> {
    let mut report = CompareReport::default();
    for (i, turn) in turns.iter().enumerate() {
        if turn.candidates.is_empty() {
            report.skipped += 1;
            continue;
        }
        let pa = top(turn, a, priority)?;
        let pb = top(turn, b, priority)?;
        report.compared += 1;
        report.disagreements += usize::from(pa != pb);
        report.picks.push(PickRow { turn: i, a: pa, b: pb });
    }
    if report.compared > 0 {
        report.rate = report.disagreements as f64 / report.compared as f64;
    }
    Ok(report)
}
