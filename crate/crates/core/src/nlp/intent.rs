use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{NlpError, Utterance};

/// Reserved label for "no intent".
pub const NONE_LABEL: &str = "none";
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.35;

const TRAIN_SEED: u64 = 0x5eed_1e7e;
const EPOCHS: usize = 120;
const LEARNING_RATE: f64 = 0.8;
const L2: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    ExactPattern,
    Classifier,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentResult {
    pub intent_name: String,
    pub confidence: f64,
    pub match_kind: MatchKind,
}

impl IntentResult {
    pub fn none() -> Self {
        Self {
            intent_name: NONE_LABEL.to_owned(),
            confidence: 0.0,
            match_kind: MatchKind::None,
        }
    }

    pub fn is(&self, label: &str) -> bool {
        self.intent_name == label
    }

    pub fn is_none(&self) -> bool {
        self.intent_name == NONE_LABEL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDef {
    pub label: String,
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default)]
    pub utterances: Vec<String>,
}

/// Raw intent configuration as it appears on disk. Must be validated into an
/// [`IntentClassifier`] before use.
///
/// An intent labelled `none` may carry training utterances; it acts as the
/// negative class and never produces a non-`none` result.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntentConfig {
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default, rename = "intent")]
    pub intents: Vec<IntentDef>,
}

fn default_floor() -> f64 {
    DEFAULT_CONFIDENCE_FLOOR
}

impl IntentConfig {
    pub fn from_toml(text: &str) -> Result<Self, NlpError> {
        Ok(toml::from_str(text)?)
    }

    /// Merges another document into this one; labels must stay unique.
    pub fn extend(&mut self, other: IntentConfig) {
        self.intents.extend(other.intents);
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|i| i.label.as_str())
    }

    /// Checks the configuration, compiles patterns and fits the classifier.
    pub fn validate(&self) -> Result<IntentClassifier, NlpError> {
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(NlpError::Config(format!("floor {} outside [0,1]", self.floor)));
        }
        let mut seen = HashSet::new();
        for def in &self.intents {
            if def.label.trim().is_empty() {
                return Err(NlpError::Config("empty intent label".into()));
            }
            if !seen.insert(def.label.as_str()) {
                return Err(NlpError::Config(format!("duplicate intent `{}`", def.label)));
            }
            if def.patterns.is_empty() && def.utterances.is_empty() {
                return Err(NlpError::Config(format!(
                    "intent `{}` has neither patterns nor utterances",
                    def.label
                )));
            }
        }
        let mut patterns = Vec::new();
        for def in &self.intents {
            for p in &def.patterns {
                let re = Regex::new(&format!("^(?:{p})$")).map_err(|source| NlpError::Pattern {
                    label: def.label.clone(),
                    source,
                })?;
                patterns.push((def.label.clone(), re));
            }
        }
        let model = LogisticModel::fit(&self.intents);
        Ok(IntentClassifier {
            patterns,
            model,
            floor: self.floor,
            labels: self.intents.iter().map(|d| d.label.clone()).collect(),
        })
    }
}

/// A validated, trained intent configuration. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct IntentClassifier {
    patterns: Vec<(String, Regex)>,
    model: Option<LogisticModel>,
    floor: f64,
    labels: Vec<String>,
}

impl IntentClassifier {
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn classify(&self, utterance: &Utterance) -> IntentResult {
        self.classify_raw(&utterance.raw_text)
    }

    pub fn classify_raw(&self, raw_text: &str) -> IntentResult {
        if let Some(label) = self.pattern_match(raw_text) {
            if label == NONE_LABEL {
                return IntentResult::none();
            }
            return IntentResult {
                intent_name: label.to_owned(),
                confidence: 1.0,
                match_kind: MatchKind::ExactPattern,
            };
        }
        self.classifier_only(raw_text)
    }

    /// First matching anchored pattern in configuration order.
    pub fn pattern_match(&self, raw_text: &str) -> Option<&str> {
        self.patterns
            .iter()
            .find(|(_, re)| re.is_match(raw_text))
            .map(|(label, _)| label.as_str())
    }

    /// Classifier prediction, bypassing exact patterns.
    pub fn classifier_only(&self, raw_text: &str) -> IntentResult {
        let Some(model) = &self.model else {
            return IntentResult::none();
        };
        // no known feature means no evidence; the bias alone would just echo class priors
        let Some(probs) = model.predict_proba(raw_text) else {
            return IntentResult::none();
        };
        let (best, p) = probs
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        let label = &model.classes[best];
        if p < self.floor || label == NONE_LABEL {
            return IntentResult::none();
        }
        IntentResult {
            intent_name: label.clone(),
            confidence: p,
            match_kind: MatchKind::Classifier,
        }
    }

    /// Class probabilities in class order, for inspection and tests.
    pub fn probabilities(&self, raw_text: &str) -> Vec<(String, f64)> {
        match &self.model {
            Some(m) => m
                .classes
                .iter()
                .cloned()
                .zip(m.predict_proba(raw_text).unwrap_or_default())
                .collect(),
            None => Vec::new(),
        }
    }
}

pub fn classify_intent(utterance: &Utterance, classifier: &IntentClassifier) -> IntentResult {
    classifier.classify(utterance)
}

/// Unigram and bigram features of a whitespace tokenized string.
fn ngram_features(raw_text: &str) -> Vec<String> {
    let tokens: Vec<&str> = raw_text.split_whitespace().collect();
    let mut feats: Vec<String> = tokens.iter().map(|t| (*t).to_owned()).collect();
    feats.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    feats
}

#[derive(Debug, Clone)]
struct TfIdf {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdf {
    fn fit(docs: &[&str]) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let unique: HashSet<String> = ngram_features(doc).into_iter().collect();
            for f in unique {
                *df.entry(f).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut vocab = HashMap::new();
        let mut idf = Vec::new();
        for (i, (feat, count)) in df.into_iter().enumerate() {
            vocab.insert(feat, i);
            idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
        }
        Self { vocab, idf }
    }

    /// L2-normalized sparse TF-IDF vector.
    fn transform(&self, raw_text: &str) -> Vec<(usize, f64)> {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for f in ngram_features(raw_text) {
            if let Some(&i) = self.vocab.get(&f) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut v: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(i, tf)| (i, tf * self.idf[i]))
            .collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

/// Multinomial logistic regression trained by seeded stochastic gradient descent.
#[derive(Debug, Clone)]
struct LogisticModel {
    classes: Vec<String>,
    tfidf: TfIdf,
    /// Row-major `classes x (vocab + 1)`; the last column is the bias.
    weights: Vec<f64>,
    dim: usize,
}

impl LogisticModel {
    fn fit(intents: &[IntentDef]) -> Option<Self> {
        let mut classes = Vec::new();
        let mut samples: Vec<(&str, usize)> = Vec::new();
        for def in intents.iter().filter(|d| !d.utterances.is_empty()) {
            let class = classes.len();
            classes.push(def.label.clone());
            samples.extend(def.utterances.iter().map(|u| (u.as_str(), class)));
        }
        if classes.is_empty() {
            return None;
        }
        let normalized: Vec<String> = samples
            .iter()
            .map(|(u, _)| super::normalize_asr(u))
            .collect();
        let docs: Vec<&str> = normalized.iter().map(String::as_str).collect();
        let tfidf = TfIdf::fit(&docs);
        let dim = tfidf.idf.len() + 1;
        let k = classes.len();
        let xs: Vec<(Vec<(usize, f64)>, usize)> = docs
            .iter()
            .zip(&samples)
            .map(|(d, (_, c))| (tfidf.transform(d), *c))
            .collect();

        let mut model = Self {
            classes,
            tfidf,
            weights: vec![0.0; k * dim],
            dim,
        };
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(TRAIN_SEED);
        let mut probs = vec![0.0; k];
        for epoch in 0..EPOCHS {
            order.shuffle(&mut rng);
            let lr = LEARNING_RATE / (1.0 + epoch as f64 * 0.02);
            for &idx in &order {
                let (x, y) = &xs[idx];
                model.logits_into(x, &mut probs);
                softmax_in_place(&mut probs);
                for c in 0..k {
                    let grad = probs[c] - if c == *y { 1.0 } else { 0.0 };
                    let row = c * dim;
                    for &(j, v) in x {
                        let w = &mut model.weights[row + j];
                        *w -= lr * (grad * v + L2 * *w);
                    }
                    model.weights[row + dim - 1] -= lr * grad;
                }
            }
        }
        Some(model)
    }

    fn logits_into(&self, x: &[(usize, f64)], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = c * self.dim;
            *o = self.weights[row + self.dim - 1]
                + x.iter().map(|&(j, v)| self.weights[row + j] * v).sum::<f64>();
        }
    }

    fn predict_proba(&self, raw_text: &str) -> Option<Vec<f64>> {
        let x = self.tfidf.transform(raw_text);
        if x.is_empty() {
            return None;
        }
        let mut out = vec![0.0; self.classes.len()];
        self.logits_into(&x, &mut out);
        softmax_in_place(&mut out);
        Some(out)
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> IntentConfig {
        IntentConfig::from_toml(
            r#"
            [[intent]]
            label = "stop_intent"
            patterns = ["stop", "(please )?(stop|exit|quit)( now)?"]

            [[intent]]
            label = "greet"
            utterances = ["hello there", "hi", "hey how are you", "good morning", "hello"]

            [[intent]]
            label = "weather"
            utterances = ["what is the weather", "is it raining", "will it rain today", "how hot is it outside"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn exact_pattern_wins() {
        let clf = toy().validate().unwrap();
        let r = clf.classify(&Utterance::new("stop", 0));
        assert_eq!(r.intent_name, "stop_intent");
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.match_kind, MatchKind::ExactPattern);
        // anchored: a longer sentence does not match
        assert_ne!(clf.classify_raw("dont stop me now").match_kind, MatchKind::ExactPattern);
    }

    #[test]
    fn classifier_fallback() {
        let clf = toy().validate().unwrap();
        let r = clf.classify_raw("will it rain tomorrow");
        assert_eq!(r.intent_name, "weather");
        assert_eq!(r.match_kind, MatchKind::Classifier);
        assert!(r.confidence >= 0.35);
    }

    #[test]
    fn out_of_vocabulary_is_none() {
        let clf = toy().validate().unwrap();
        let r = clf.classify_raw("zebra xylophone quantum");
        assert_eq!(r, IntentResult::none());
    }

    #[test]
    fn deterministic() {
        let a = toy().validate().unwrap();
        let b = toy().validate().unwrap();
        for s in ["hello friend", "is it hot", "stop", ""] {
            assert_eq!(a.classify_raw(s), b.classify_raw(s));
            assert_eq!(a.probabilities(s), b.probabilities(s));
        }
    }

    #[test]
    fn validation_errors() {
        let mut c = toy();
        c.intents.push(IntentDef {
            label: "greet".into(),
            patterns: vec!["x".into()],
            utterances: vec![],
        });
        assert!(matches!(c.validate(), Err(NlpError::Config(_))));

        let c = IntentConfig {
            floor: 0.35,
            intents: vec![IntentDef {
                label: "empty".into(),
                patterns: vec![],
                utterances: vec![],
            }],
        };
        assert!(matches!(c.validate(), Err(NlpError::Config(_))));

        let c = IntentConfig {
            floor: 0.35,
            intents: vec![IntentDef {
                label: "bad".into(),
                patterns: vec!["(".into()],
                utterances: vec![],
            }],
        };
        assert!(matches!(c.validate(), Err(NlpError::Pattern { .. })));
    }
}
