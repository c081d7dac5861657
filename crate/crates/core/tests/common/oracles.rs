//! Independent reimplementations the library is checked against.

use std::sync::Arc;

use genrank::guardrails::{check_degeneration, fnv1a, DegenerationPolicy, Embedder};
use genrank::ranker::{PolyEncoder, PolyEncoderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Counts every n-gram of token ids with nested loops and compares each
/// count to the limit.
pub fn brute_force_degenerate(ids: &[usize], policy: &DegenerationPolicy) -> bool {
    for (&n, &limit) in &policy.per_n_thresholds {
        if n == 0 || ids.len() < n {
            continue;
        }
        for i in 0..=ids.len() - n {
            let mut count = 0;
            for j in 0..=ids.len() - n {
                if ids[i..i + n] == ids[j..j + n] {
                    count += 1;
                }
            }
            if count > limit {
                return true;
            }
        }
    }
    false
}

/// Whether any n-gram ending at the last token occurs more than its limit.
pub fn suffix_grams_exceed(ids: &[usize], policy: &DegenerationPolicy) -> bool {
    let len = ids.len();
    for (&n, &limit) in &policy.per_n_thresholds {
        if n == 0 || len < n {
            continue;
        }
        let mut count = 0;
        for j in 0..=len - n {
            if (0..n).all(|k| ids[j + k] == ids[len - n + k]) {
                count += 1;
            }
        }
        if count > limit {
            return true;
        }
    }
    false
}

pub fn render(ids: &[usize], words: &[&str]) -> String {
    ids.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ")
}

/// Depth-first walk over every token sequence up to `max_len`, checking
/// `check_degeneration` on each against the counter. Returns (checked, failing).
pub fn exhaustive_degeneration(words: &[&str], policy: &DegenerationPolicy, max_len: usize) -> Result<(u64, u64), String> {
    struct Walk<'a> {
        words: &'a [&'a str],
        policy: &'a DegenerationPolicy,
        max_len: usize,
        ids: Vec<usize>,
        text: String,
        checked: u64,
        failing: u64,
    }
    impl Walk<'_> {
        fn visit(&mut self, prefix_degenerate: bool) -> Result<(), String> {
            // counts only grow as the string extends, so a degenerate prefix
            // stays degenerate; otherwise only the n-grams ending at the new
            // token can have crossed their limit
            let want = prefix_degenerate || suffix_grams_exceed(&self.ids, self.policy);
            let got = !check_degeneration(&self.text, self.policy).passed;
            if got != want {
                return Err(format!("`{}`: check says {got}, counter says {want}", self.text));
            }
            self.checked += 1;
            self.failing += u64::from(want);
            if self.ids.len() == self.max_len {
                return Ok(());
            }
            let mark = self.text.len();
            for w in 0..self.words.len() {
                if !self.text.is_empty() {
                    self.text.push(' ');
                }
                self.text.push_str(self.words[w]);
                self.ids.push(w);
                self.visit(want)?;
                self.ids.pop();
                self.text.truncate(mark);
            }
            Ok(())
        }
    }
    let mut walk = Walk {
        words,
        policy,
        max_len,
        ids: Vec::new(),
        text: String::new(),
        checked: 0,
        failing: 0,
    };
    walk.visit(false)?;
    Ok((walk.checked, walk.failing))
}

/// Random strings of 13..=40 tokens checked against the full counter.
pub fn random_degeneration(n: usize, seed: u64) -> Result<(), String> {
    let words = ["the", "movie", "was", "great", "fun"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = DegenerationPolicy::default();
    let lenient = DegenerationPolicy {
        per_n_thresholds: [(1, 12), (2, 6), (3, 4), (5, 2)].into_iter().collect(),
    };
    for _ in 0..n {
        let len = rng.random_range(13..=40);
        // fewer distinct words in some strings so both outcomes are common
        let k = rng.random_range(2..=words.len());
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        let text = render(&ids, &words);
        for p in [&policy, &lenient] {
            if !check_degeneration(&text, p).passed != brute_force_degenerate(&ids, p) {
                return Err(format!("disagreement on `{text}`"));
            }
        }
    }
    Ok(())
}

/// Unit Gaussian vector per text, seeded by the text's hash.
pub struct GaussEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for GaussEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, text.as_bytes()));
        let v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }
}

pub const POLY_HISTORY: [&str; 3] = [
    "i watched a great movie last night",
    "oh nice, which one was it?",
    "the silence of the lambs, it was so creepy",
];
pub const POLY_CANDIDATES: [&str; 4] = [
    "anthony hopkins was amazing in that one",
    "do you like pizza?",
    "i love creepy thrillers",
    "what is your favorite color?",
];
/// `poly_oracle_score` on the fixture, frozen.
pub const POLY_FROZEN: [f64; 4] = [
    -0.004902759529447038,
    0.11841359986357408,
    -0.14460551454300086,
    -0.18147086933847323,
];

/// m=4 encoder over a 16-dim seeded Gaussian embedder.
pub fn poly_fixture() -> (PolyEncoder, Arc<GaussEmbedder>) {
    let emb = Arc::new(GaussEmbedder { dim: 16, seed: 42 });
    let cfg = PolyEncoderConfig {
        m: 4,
        embed_dim: 16,
        code_init_seed: 11,
        max_context_tokens: 1024,
    };
    (PolyEncoder::new(cfg, emb.clone()).unwrap(), emb)
}

/// Straight-line poly-encoder score: codes attend over utterances, the
/// candidate attends over the resulting context vectors, score is the dot.
pub fn poly_oracle_score(codes: &[Vec<f64>], utts: &[Vec<f64>], cand: &[f64]) -> f64 {
    let d = cand.len();
    let mut ctx = Vec::new();
    for code in codes {
        let mut logits = Vec::new();
        for u in utts {
            let mut s = 0.0;
            for k in 0..d {
                s += code[k] * u[k];
            }
            logits.push(s);
        }
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let ws: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = ws.iter().sum();
        let mut v = vec![0.0; d];
        for (w, u) in ws.iter().zip(utts) {
            for k in 0..d {
                v[k] += w / z * u[k];
            }
        }
        ctx.push(v);
    }
    let mut logits = Vec::new();
    for v in &ctx {
        let mut s = 0.0;
        for k in 0..d {
            s += cand[k] * v[k];
        }
        logits.push(s);
    }
    let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
    let ws: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = ws.iter().sum();
    let mut score = 0.0;
    for (w, v) in ws.iter().zip(&ctx) {
        for k in 0..d {
            score += cand[k] * w / z * v[k];
        }
    }
    score
}
