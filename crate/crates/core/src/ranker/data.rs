//! Annotation records and training-example assembly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RankerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Good,
    Bad,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub history: Vec<String>,
    pub candidate_text: String,
    pub label: Label,
    pub source: String,
    #[serde(default)]
    pub split: Split,
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, RankerError> {
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

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, RankerError> {
    parse_annotations(&std::fs::read_to_string(path)?)
}

/// One JSON object per line, in input order.
pub fn export_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnKey {
    pub conversation_id: String,
    pub turn_index: usize,
}

/// The labeled candidates of one conversation turn, skips removed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTurn {
    pub key: TurnKey,
    pub split: Split,
    pub history: Vec<String>,
    pub candidates: Vec<(String, Label)>,
}

impl AnnotatedTurn {
    pub fn good(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(|(_, l)| *l == Label::Good)
            .map(|(t, _)| t.as_str())
    }

    pub fn bad(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(|(_, l)| *l == Label::Bad)
            .map(|(t, _)| t.as_str())
    }

    /// One source example per good candidate.
    pub fn examples(&self) -> Vec<SourceExample> {
        self.good()
            .map(|g| SourceExample {
                history: self.history.clone(),
                correct: g.to_owned(),
                turn: self.key.clone(),
            })
            .collect()
    }
}

/// Groups records by turn in key order. Turns with nothing but skips vanish.
pub fn group_turns(records: &[AnnotationRecord]) -> Vec<AnnotatedTurn> {
    let mut turns: BTreeMap<TurnKey, AnnotatedTurn> = BTreeMap::new();
    for r in records.iter().filter(|r| r.label != Label::Skip) {
        let key = TurnKey {
            conversation_id: r.conversation_id.clone(),
            turn_index: r.turn_index,
        };
        turns
            .entry(key.clone())
            .or_insert_with(|| AnnotatedTurn {
                key,
                split: r.split,
                history: r.history.clone(),
                candidates: Vec::new(),
            })
            .candidates
            .push((r.candidate_text.clone(), r.label));
    }
    turns.into_values().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub conversations: usize,
    pub turns: usize,
    pub candidates: usize,
    pub good: usize,
    pub bad: usize,
}

impl SplitStats {
    fn of<'a>(turns: impl Iterator<Item = &'a AnnotatedTurn>) -> Self {
        let mut s = Self::default();
        let mut convs = BTreeSet::new();
        for t in turns {
            convs.insert(t.key.conversation_id.as_str());
            s.turns += 1;
            s.candidates += t.candidates.len();
            s.good += t.good().count();
            s.bad += t.bad().count();
        }
        s.conversations = convs.len();
        s
    }
}

/// Dataset summary in the layout of a total/training/validation table, each
/// cell repeated with single-candidate turns removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationStats {
    pub total: SplitStats,
    pub training: SplitStats,
    pub validation: SplitStats,
    pub total_multi: SplitStats,
    pub training_multi: SplitStats,
    pub validation_multi: SplitStats,
    pub skipped: usize,
    pub single_candidate_turns: usize,
}

pub fn annotation_stats(records: &[AnnotationRecord]) -> AnnotationStats {
    let turns = group_turns(records);
    let multi = |t: &&AnnotatedTurn| t.candidates.len() > 1;
    let in_split = |s: Split| move |t: &&AnnotatedTurn| t.split == s;
    AnnotationStats {
        total: SplitStats::of(turns.iter()),
        training: SplitStats::of(turns.iter().filter(in_split(Split::Train))),
        validation: SplitStats::of(turns.iter().filter(in_split(Split::Validation))),
        total_multi: SplitStats::of(turns.iter().filter(multi)),
        training_multi: SplitStats::of(turns.iter().filter(multi).filter(in_split(Split::Train))),
        validation_multi: SplitStats::of(turns.iter().filter(multi).filter(in_split(Split::Validation))),
        skipped: records.iter().filter(|r| r.label == Label::Skip).count(),
        single_candidate_turns: turns.iter().filter(|t| t.candidates.len() == 1).count(),
    }
}

impl AnnotationStats {
    /// Plain-text table; parenthesized numbers exclude single-candidate turns.
    pub fn table(&self) -> String {
        let cell = |all: usize, multi: usize| format!("{all} ({multi})");
        let rows: [(&str, fn(&SplitStats) -> usize); 5] = [
            ("conversations", |s| s.conversations),
            ("turns", |s| s.turns),
            ("candidate responses", |s| s.candidates),
            ("labeled good", |s| s.good),
            ("labeled bad", |s| s.bad),
        ];
        let mut out = format!("{:<22}{:>18}{:>18}{:>18}\n", "", "total", "training", "validation");
        for (name, f) in rows {
            let _ = writeln!(
                out,
                "{:<22}{:>18}{:>18}{:>18}",
                name,
                cell(f(&self.total), f(&self.total_multi)),
                cell(f(&self.training), f(&self.training_multi)),
                cell(f(&self.validation), f(&self.validation_multi)),
            );
        }
        let _ = writeln!(out, "skipped records: {}", self.skipped);
        let _ = writeln!(out, "single-candidate turns: {}", self.single_candidate_turns);
        out
    }
}

/// A context with its one correct response, before distractors are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceExample {
    pub history: Vec<String>,
    pub correct: String,
    pub turn: TurnKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrigin {
    Batch,
    Inline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingExample {
    pub history: Vec<String>,
    pub correct: String,
    pub distractors: Vec<String>,
    pub origin: ExampleOrigin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSlot {
    pub custom: bool,
    pub turn: TurnKey,
    pub example: RankingExample,
}

pub type Batch = Vec<BatchSlot>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub custom_per_batch: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            custom_per_batch: 3,
        }
    }
}

/// In-batch distractors of slot `i`: the other slots' correct responses.
pub fn batch_distractors(batch: &Batch, i: usize) -> Vec<&str> {
    batch
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, s)| s.example.correct.as_str())
        .collect()
}

fn slot(e: &SourceExample, custom: bool) -> BatchSlot {
    BatchSlot {
        custom,
        turn: e.turn.clone(),
        example: RankingExample {
            history: e.history.clone(),
            correct: e.correct.clone(),
            distractors: Vec::new(),
            origin: ExampleOrigin::Batch,
        },
    }
}

/// Mixes custom and auxiliary examples into fixed-size batches.
///
/// Custom examples are first packed into groups of `custom_per_batch` from
/// distinct turns, always drawing from the turns with the most examples left
/// (which maximizes the number of groups). Each group is topped up with
/// auxiliary examples; leftover auxiliary examples form auxiliary-only
/// batches. Custom examples that cannot join a full group and a trailing
/// partial batch are dropped.
pub fn assemble_batch(
    custom: &[SourceExample],
    auxiliary: &[SourceExample],
    config: BatchConfig,
    rng_seed: u64,
) -> Result<Vec<Batch>, RankerError> {
    let BatchConfig {
        batch_size,
        custom_per_batch: k,
    } = config;
    if batch_size == 0 || batch_size < k {
        return Err(RankerError::Config(format!(
            "batch_size {batch_size} must be positive and at least custom_per_batch {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut groups: BTreeMap<&TurnKey, Vec<&SourceExample>> = BTreeMap::new();
    for e in custom {
        groups.entry(&e.turn).or_default().push(e);
    }
    for g in groups.values_mut() {
        g.shuffle(&mut rng);
    }
    let mut tuples: Vec<Vec<&SourceExample>> = Vec::new();
    if k > 0 {
        loop {
            let mut keys: Vec<&TurnKey> = groups.iter().filter(|(_, g)| !g.is_empty()).map(|(k, _)| *k).collect();
            if keys.len() < k {
                break;
            }
            keys.sort_by(|a, b| groups[b].len().cmp(&groups[a].len()).then(a.cmp(b)));
            let tuple = keys[..k]
                .iter()
                .map(|key| groups.get_mut(key).and_then(Vec::pop).expect("non-empty group"))
                .collect();
            tuples.push(tuple);
        }
    }
    tuples.shuffle(&mut rng);

    let mut aux: Vec<&SourceExample> = auxiliary.iter().collect();
    aux.shuffle(&mut rng);
    let mut aux = aux.into_iter();

    let mut batches = Vec::new();
    for tuple in tuples {
        let mut batch: Batch = tuple.into_iter().map(|e| slot(e, true)).collect();
        batch.extend(aux.by_ref().take(batch_size - k).map(|e| slot(e, false)));
        if batch.len() < batch_size {
            return Ok(batches);
        }
        batches.push(batch);
    }
    loop {
        let batch: Batch = aux.by_ref().take(batch_size).map(|e| slot(e, false)).collect();
        if batch.len() < batch_size {
            break;
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// One example per good candidate with exactly `n_distractors` distractors:
/// the turn's bad candidates (sampled down if there are more), then
/// distinct pool responses to fill the gap. Pool padding never uses any of
/// the turn's good responses.
pub fn assemble_inline(
    turns: &[AnnotatedTurn],
    pool: &[String],
    n_distractors: usize,
    rng_seed: u64,
) -> Result<Vec<RankingExample>, RankerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    for turn in turns {
        for correct in turn.good() {
            let mut dedicated: Vec<&str> = Vec::new();
            for b in turn.bad() {
                if b != correct && !dedicated.contains(&b) {
                    dedicated.push(b);
                }
            }
            if dedicated.len() > n_distractors {
                let mut picks = index::sample(&mut rng, dedicated.len(), n_distractors).into_vec();
                picks.sort_unstable();
                dedicated = picks.into_iter().map(|i| dedicated[i]).collect();
            }
            let mut distractors: Vec<String> = dedicated.iter().map(|s| s.to_string()).collect();
            let need = n_distractors - distractors.len();
            if need > 0 {
                let taken: HashSet<&str> = dedicated.iter().copied().chain(turn.good()).collect();
                let mut seen = HashSet::new();
                let eligible: Vec<&String> = pool
                    .iter()
                    .filter(|p| !taken.contains(p.as_str()) && seen.insert(p.as_str()))
                    .collect();
                if eligible.len() < need {
                    return Err(RankerError::Dataset(format!(
                        "turn {}:{} needs {need} pool distractors, {} eligible",
                        turn.key.conversation_id,
                        turn.key.turn_index,
                        eligible.len()
                    )));
                }
                let picks = index::sample(&mut rng, eligible.len(), need);
                distractors.extend(picks.into_iter().map(|i| eligible[i].clone()));
            }
            out.push(RankingExample {
                history: turn.history.clone(),
                correct: correct.to_owned(),
                distractors,
                origin: ExampleOrigin::Inline,
            });
        }
    }
    Ok(out)
}
