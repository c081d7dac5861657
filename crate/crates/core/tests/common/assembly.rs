//! Invariant checks for the two training-data assembly routines.

use std::collections::HashSet;

use genrank::ranker::{assemble_batch, assemble_inline, AnnotatedTurn, BatchConfig, Label, SourceExample, Split, TurnKey};

pub fn source(conv: &str, turn: usize, text: String) -> SourceExample {
    SourceExample {
        history: vec!["hi".into()],
        correct: text,
        turn: TurnKey {
            conversation_id: conv.into(),
            turn_index: turn,
        },
    }
}

/// Assembles batches from customs tagged with the given turn ids plus
/// `n_aux` auxiliary examples and checks the mixing rule. Returns the
/// number of batches.
pub fn batch_invariants(custom_turns: &[usize], n_aux: usize, seed: u64) -> Result<usize, String> {
    let custom: Vec<_> = custom_turns
        .iter()
        .enumerate()
        .map(|(i, t)| source("c", *t, format!("custom {i}")))
        .collect();
    let aux: Vec<_> = (0..n_aux).map(|i| source("aux", i, format!("aux {i}"))).collect();
    let batches = assemble_batch(&custom, &aux, BatchConfig::default(), seed).map_err(|e| e.to_string())?;
    let mut exhausted = false;
    let mut seen = HashSet::new();
    for (k, b) in batches.iter().enumerate() {
        if b.len() != 20 {
            return Err(format!("batch {k} has size {}", b.len()));
        }
        let customs: Vec<_> = b.iter().filter(|s| s.custom).collect();
        if customs.is_empty() {
            exhausted = true;
        } else {
            if exhausted {
                return Err(format!("batch {k} has customs after an auxiliary-only batch"));
            }
            let turns: HashSet<_> = customs.iter().map(|s| &s.turn).collect();
            if customs.len() != 3 || turns.len() != 3 {
                return Err(format!("batch {k}: {} customs from {} turns", customs.len(), turns.len()));
            }
        }
        for s in b {
            if !seen.insert(s.example.correct.clone()) {
                return Err(format!("batch {k} reuses {:?}", s.example.correct));
            }
            if !s.example.distractors.is_empty() {
                return Err(format!("batch {k} carries inline distractors"));
            }
        }
    }
    let used_aux = batches.iter().flatten().filter(|s| !s.custom).count();
    if n_aux - used_aux >= 20 {
        return Err(format!("{} auxiliary examples left over", n_aux - used_aux));
    }
    Ok(batches.len())
}

fn annotated(good: &[&str], bad: &[String]) -> AnnotatedTurn {
    let mut candidates: Vec<(String, Label)> = good.iter().map(|g| (g.to_string(), Label::Good)).collect();
    candidates.extend(bad.iter().map(|b| (b.clone(), Label::Bad)));
    AnnotatedTurn {
        key: TurnKey {
            conversation_id: "c".into(),
            turn_index: 0,
        },
        split: Split::Train,
        history: vec!["hi".into()],
        candidates,
    }
}

/// One turn with 12 bad candidates (subsampled) and one with two goods and
/// 4 bad (padded from a pool that also holds a good response).
pub fn inline_invariants(seed: u64) -> Result<(), String> {
    let mut pool: Vec<String> = (0..40).map(|i| format!("pool {i}")).collect();
    pool.push("good one".into());
    let twelve: Vec<String> = (0..12).map(|i| format!("bad {i}")).collect();
    let four: Vec<String> = (0..4).map(|i| format!("bad {i}")).collect();
    let turns = [annotated(&["good one"], &twelve), annotated(&["good one", "good two"], &four)];
    let ex = assemble_inline(&turns, &pool, 9, seed).map_err(|e| e.to_string())?;
    if ex.len() != 3 {
        return Err(format!("{} examples, want 3", ex.len()));
    }
    for e in &ex {
        let distinct: HashSet<_> = e.distractors.iter().collect();
        if e.distractors.len() != 9 || distinct.len() != 9 {
            return Err(format!("{:?}: {} distractors, {} distinct", e.correct, e.distractors.len(), distinct.len()));
        }
        if e.distractors.contains(&e.correct) {
            return Err(format!("{:?} is its own distractor", e.correct));
        }
    }
    if !ex[0].distractors.iter().all(|d| twelve.contains(d)) {
        return Err("subsampled example drew from the pool".into());
    }
    for e in &ex[1..] {
        if e.distractors[..4] != four[..] || !e.distractors[4..].iter().all(|d| d.starts_with("pool")) {
            return Err(format!("{:?}: padding is not dedicated-first {:?}", e.correct, e.distractors));
        }
    }
    Ok(())
}
