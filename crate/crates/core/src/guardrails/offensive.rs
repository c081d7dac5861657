use std::collections::HashMap;

use crate::nlp::plain_tokens;

use super::GuardrailError;

/// Scores text for toxicity in `[0, 1]`.
pub trait OffensivenessModel: Send + Sync {
    fn score(&self, text: &str) -> f64;
}

/// Weighted profanity lexicon.
///
/// Each matched term contributes its weight as an independent probability of
/// the text being offensive; the score is `1 - prod(1 - w)` over all matches.
/// Terms are token aligned and may span several words.
#[derive(Debug, Clone, Default)]
pub struct LexiconModel {
    terms: HashMap<String, f64>,
    max_tokens: usize,
}

impl LexiconModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, term: &str, weight: f64) {
        let toks = plain_tokens(term);
        if toks.is_empty() {
            return;
        }
        self.max_tokens = self.max_tokens.max(toks.len());
        self.terms.insert(toks.join(" "), weight.clamp(0.0, 1.0));
    }

    /// One term per line with an optional trailing weight (default 1.0).
    /// `#` starts a comment line.
    pub fn from_lines(text: &str) -> Result<Self, GuardrailError> {
        let mut model = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, weight) = match line.rsplit_once(|c: char| c == '\t' || c == ' ') {
                Some((term, w)) if w.parse::<f64>().is_ok() => {
                    let w: f64 = w.parse().expect("checked");
                    if !(0.0..=1.0).contains(&w) {
                        return Err(GuardrailError::Lexicon {
                            line: i + 1,
                            reason: format!("weight {w} outside [0,1]"),
                        });
                    }
                    (term.trim(), w)
                }
                _ => (line, 1.0),
            };
            model.insert(term, weight);
        }
        Ok(model)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Matched terms with their weights, longest match first, left to right.
    pub fn hits(&self, text: &str) -> Vec<(String, f64)> {
        let toks = plain_tokens(text);
        let mut hits = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            let found = (1..=self.max_tokens.min(toks.len() - i))
                .rev()
                .find_map(|len| {
                    let key = toks[i..i + len].join(" ");
                    self.terms.get(&key).map(|w| (len, key, *w))
                });
            match found {
                Some((len, key, w)) => {
                    hits.push((key, w));
                    i += len;
                }
                None => i += 1,
            }
        }
        hits
    }
}

impl OffensivenessModel for LexiconModel {
    fn score(&self, text: &str) -> f64 {
        let clean: f64 = self.hits(text).iter().map(|(_, w)| 1.0 - w).product();
        (1.0 - clean).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_weights() {
        let m = LexiconModel::from_lines("# comment\nbutt 0.3\nson of a gun\t0.5\ndamn\n").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.hits("Damn, son of a gun!"), vec![("damn".into(), 1.0), ("son of a gun".into(), 0.5)]);
        assert!(LexiconModel::from_lines("x 1.5").is_err());
    }

    #[test]
    fn noisy_or() {
        let m = LexiconModel::from_lines("a 0.5\nb 0.5").unwrap();
        assert_eq!(m.score("a"), 0.5);
        assert_eq!(m.score("a b"), 0.75);
        assert_eq!(m.score("c d"), 0.0);
    }
}
