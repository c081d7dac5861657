//! Text embedders shared by the repetition guardrail and the ranker.

use crate::nlp::plain_tokens;

/// Maps text to a vector. Implementations used by the guardrails and the
/// ranker must return unit-norm vectors for non-empty text.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// L2-normalized hashed bag of unigrams and bigrams.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM, DEFAULT_HASH_SEED)
    }
}

impl HashedBowEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn bucket(&self, feature: &str) -> usize {
        (fnv1a(self.seed, feature.as_bytes()) % self.dim as u64) as usize
    }

    /// Unigram and bigram features after lowercasing and stripping punctuation.
    pub fn features(text: &str) -> Vec<String> {
        let toks = plain_tokens(text);
        let mut feats: Vec<String> = toks.clone();
        feats.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        feats
    }
}

impl Embedder for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for f in Self::features(text) {
            v[self.bucket(&f)] += 1.0;
        }
        normalize(&mut v);
        v
    }
}

/// 64-bit FNV-1a with the seed folded into the offset basis.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
