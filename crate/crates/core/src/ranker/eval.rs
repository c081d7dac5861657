//! Hits@1 evaluation over held-out labeled turns.

use serde::{Deserialize, Serialize};

use super::{RankerError, Scorer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCandidate {
    pub text: String,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTurn {
    pub history: Vec<String>,
    pub candidates: Vec<EvalCandidate>,
}

pub fn parse_eval_dataset(text: &str) -> Result<Vec<EvalTurn>, RankerError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RankerError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub n_candidates: usize,
    pub n_good: usize,
    pub chosen_good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub hits_at_1: f64,
    pub n_turns: usize,
    pub per_turn: Vec<TurnOutcome>,
    /// Turns with a single candidate, left out of every figure.
    pub dropped_single: usize,
    /// Good candidates over all candidates, pooled across turns.
    pub pooled_good_fraction: f64,
    /// Mean per-turn chance that a uniform pick is good.
    pub expected_random: f64,
}

/// Picks the top-scoring candidate per turn (first index on ties) and
/// reports the fraction of turns where it was labeled good.
pub fn evaluate(turns: &[EvalTurn], scorer: &dyn Scorer) -> Result<EvalResult, RankerError> {
    let mut per_turn = Vec::new();
    let mut dropped_single = 0;
    for (i, turn) in turns.iter().enumerate() {
        match turn.candidates.len() {
            0 => return Err(RankerError::Dataset(format!("turn {} has no candidates", i + 1))),
            1 => {
                dropped_single += 1;
                continue;
            }
            _ => {}
        }
        let texts: Vec<&str> = turn.candidates.iter().map(|c| c.text.as_str()).collect();
        let scores = scorer.score_batch(&turn.history, &texts)?;
        let mut best = 0;
        for (j, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = j;
            }
        }
        per_turn.push(TurnOutcome {
            n_candidates: texts.len(),
            n_good: turn.candidates.iter().filter(|c| c.good).count(),
            chosen_good: turn.candidates[best].good,
        });
    }
    let n = per_turn.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let hits = per_turn.iter().filter(|t| t.chosen_good).count();
    let good: usize = per_turn.iter().map(|t| t.n_good).sum();
    let all: usize = per_turn.iter().map(|t| t.n_candidates).sum();
    let expected = if n == 0 {
        0.0
    } else {
        per_turn.iter().map(|t| ratio(t.n_good, t.n_candidates)).sum::<f64>() / n as f64
    };
    Ok(EvalResult {
        hits_at_1: ratio(hits, n),
        n_turns: n,
        per_turn,
        dropped_single,
        pooled_good_fraction: ratio(good, all),
        expected_random: expected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::{FixtureScorer, OracleScorer};

    fn turn(cands: &[(&str, bool)]) -> EvalTurn {
        EvalTurn {
            history: vec!["hi".into()],
            candidates: cands
                .iter()
                .map(|(t, g)| EvalCandidate {
                    text: t.to_string(),
                    good: *g,
                })
                .collect(),
        }
    }

    #[test]
    fn oracle_hits_every_turn_with_a_good_candidate() {
        let turns = vec![
            turn(&[("a", false), ("b", true)]),
            turn(&[("c", true), ("d", false), ("e", false)]),
            turn(&[("only", true)]),
        ];
        let oracle = OracleScorer {
            good: ["b", "c"].iter().map(|s| s.to_string()).collect(),
        };
        let r = evaluate(&turns, &oracle).unwrap();
        assert_eq!(r.hits_at_1, 1.0);
        assert_eq!(r.n_turns, 2);
        assert_eq!(r.dropped_single, 1);
        assert!((r.pooled_good_fraction - 2.0 / 5.0).abs() < 1e-12);
        assert!((r.expected_random - (0.5 + 1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_first_index() {
        let turns = vec![turn(&[("a", true), ("b", false)]), turn(&[("c", false), ("d", true)])];
        let r = evaluate(&turns, &FixtureScorer::default()).unwrap();
        assert_eq!(r.hits_at_1, 0.5);
        assert!(evaluate(&[turn(&[])], &FixtureScorer::default()).is_err());
    }

    #[test]
    fn parse_reports_line() {
        let ok = r#"{"history":["hi"],"candidates":[{"text":"a","good":true}]}"#;
        assert_eq!(parse_eval_dataset(ok).unwrap().len(), 1);
        assert!(matches!(
            parse_eval_dataset(&format!("{ok}\n\nnope")),
            Err(RankerError::Parse { line: 3, .. })
        ));
    }
}
