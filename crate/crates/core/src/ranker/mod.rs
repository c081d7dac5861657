//! Candidate ranking plus the ranking-data toolchain: annotation files,
//! batch and inline training-example assembly, and hits@1 evaluation.

mod data;
mod eval;
mod scoring;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use data::{
    annotation_stats, assemble_batch, assemble_inline, batch_distractors, export_annotations,
    group_turns, load_annotations, parse_annotations, AnnotatedTurn, AnnotationRecord,
    AnnotationStats, Batch, BatchConfig, BatchSlot, ExampleOrigin, Label, RankingExample,
    SourceExample, Split, SplitStats, TurnKey,
};
pub use eval::{evaluate, parse_eval_dataset, EvalCandidate, EvalResult, EvalTurn, TurnOutcome};
pub use scoring::{
    attend, softmax, truncate_history, ConversationEvaluator, EvaluatorScores, EvaluatorSelector,
    FixtureScorer, MockEvaluator, OracleScorer, PolyEncoder, PolyEncoderConfig, RandomScorer, Scorer,
    DEFAULT_CONTEXT_TOKENS,
};

use crate::generators::{Candidate, GeneratorKind};

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("history is empty after truncation")]
    EmptyHistory,
    #[error("no candidates to rank")]
    EmptyCandidates,
    #[error("ranker config: {0}")]
    Config(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tie-break order by generator kind; lower ranks first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorityTable(pub BTreeMap<GeneratorKind, u32>);

impl Default for PriorityTable {
    fn default() -> Self {
        Self(BTreeMap::from([
            (GeneratorKind::Rule, 0),
            (GeneratorKind::Qa, 1),
            (GeneratorKind::KnowledgeTemplate, 1),
            (GeneratorKind::Remote, 2),
        ]))
    }
}

impl PriorityTable {
    pub fn rank_of(&self, kind: GeneratorKind) -> u32 {
        self.0.get(&kind).copied().unwrap_or(u32::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub candidate: Candidate,
    pub score: f64,
}

/// Orders by score (high first), then priority, then arrival.
pub fn compare_ranked(a: &Ranked, b: &Ranked, priority: &PriorityTable) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(priority.rank_of(a.candidate.kind).cmp(&priority.rank_of(b.candidate.kind)))
        .then(a.candidate.arrival.cmp(&b.candidate.arrival))
}

pub fn rank(
    history: &[String],
    candidates: Vec<Candidate>,
    scorer: &dyn Scorer,
    priority: &PriorityTable,
) -> Result<Vec<Ranked>, RankerError> {
    if candidates.is_empty() {
        return Err(RankerError::EmptyCandidates);
    }
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let scores = scorer.score_batch(history, &texts)?;
    let mut ranked: Vec<Ranked> = candidates
        .into_iter()
        .zip(scores)
        .map(|(candidate, score)| Ranked {
            candidate,
            // NaN would poison the order; treat it as the worst score
            score: if score.is_nan() { f64::NEG_INFINITY } else { score },
        })
        .collect();
    ranked.sort_by(|a, b| compare_ranked(a, b, priority));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(text: &str, kind: GeneratorKind, arrival: usize) -> Candidate {
        let mut c = Candidate::new(text, "t", kind, 0).unwrap();
        c.arrival = arrival;
        c
    }

    #[test]
    fn score_then_priority_then_arrival() {
        let scorer = FixtureScorer::default()
            .with("high", 0.9)
            .with("low", 0.3)
            .with("tie remote", 0.5)
            .with("tie rule", 0.5)
            .with("tie remote later", 0.5);
        let got = rank(
            &["hi".to_owned()],
            vec![
                cand("low", GeneratorKind::Remote, 0),
                cand("tie remote", GeneratorKind::Remote, 1),
                cand("tie remote later", GeneratorKind::Remote, 2),
                cand("tie rule", GeneratorKind::Rule, 3),
                cand("high", GeneratorKind::Remote, 4),
            ],
            &scorer,
            &PriorityTable::default(),
        )
        .unwrap();
        let order: Vec<_> = got.iter().map(|r| r.candidate.text.as_str()).collect();
        assert_eq!(order, vec!["high", "tie rule", "tie remote", "tie remote later", "low"]);
        assert!(matches!(
            rank(&[], vec![], &scorer, &PriorityTable::default()),
            Err(RankerError::EmptyCandidates)
        ));
    }
}
