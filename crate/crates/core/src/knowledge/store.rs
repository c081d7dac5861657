use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::RwLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::triples::{canonical_triples, Triple};
use super::{annotation_text, parse_date, Annotators, FeedDocument, KnowledgeError, KnowledgeItem, GENERAL_TOPIC};
use crate::guardrails::fnv1a;
use crate::nlp::EntityMention;

/// Age in days after which an item no longer earns recency credit.
pub const RECENCY_WINDOW_DAYS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScore {
    pub entity_overlap: usize,
    pub topic_match: u8,
    pub recency: f64,
}

impl RetrievalScore {
    pub fn recency_for(published: NaiveDate, now: NaiveDate) -> f64 {
        let age = (now - published).num_days() as f64;
        (1.0 - age.max(0.0) / RECENCY_WINDOW_DAYS).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum IngestOutcome {
    Stored(KnowledgeItem),
    Rejected { headline: String, reason: String },
}

#[derive(Debug, Default, Serialize)]
pub struct IngestReport {
    pub stored: usize,
    pub rejected: Vec<(usize, String)>,
    pub errors: Vec<(usize, String)>,
}

#[derive(Debug, Default)]
struct Inner {
    items: BTreeMap<String, KnowledgeItem>,
    by_entity: HashMap<String, BTreeSet<String>>,
    by_topic: HashMap<String, BTreeSet<String>>,
}

impl Inner {
    fn remove(&mut self, id: &str) {
        if let Some(old) = self.items.remove(id) {
            for key in old.entity_keys() {
                if let Some(ids) = self.by_entity.get_mut(&key) {
                    ids.remove(id);
                }
            }
            if let Some(ids) = self.by_topic.get_mut(&old.topic) {
                ids.remove(id);
            }
        }
    }

    fn insert(&mut self, item: KnowledgeItem) {
        self.remove(&item.id);
        for key in item.entity_keys() {
            self.by_entity.entry(key).or_default().insert(item.id.clone());
        }
        self.by_topic
            .entry(item.topic.clone())
            .or_default()
            .insert(item.id.clone());
        self.items.insert(item.id.clone(), item);
    }
}

/// In-process triple store. Readers share the lock; an ingest batch holds
/// the write lock for its whole insert, so queries never see half a batch.
#[derive(Debug, Default)]
pub struct KnowledgeStore {
    inner: RwLock<Inner>,
}

/// Stable id derived from source, date and headline.
fn item_id(doc: &FeedDocument, date: NaiveDate) -> String {
    let key = format!("{}\u{1f}{}\u{1f}{}", doc.source, date, doc.headline.trim());
    format!("post:{:016x}", fnv1a(0, key.as_bytes()))
}

/// Annotates and screens one document without touching any store.
pub fn annotate(doc: &FeedDocument, annotators: Annotators<'_>, today: NaiveDate) -> Result<IngestOutcome, KnowledgeError> {
    let headline = doc.headline.trim();
    if headline.is_empty() {
        return Err(KnowledgeError::EmptyHeadline);
    }
    let date = parse_date(&doc.date)?;
    if date > today {
        return Err(KnowledgeError::FutureDate { date, today });
    }
    let body = doc.body.trim();
    for (what, text) in [("headline", headline), ("body", body)] {
        let score = annotators.offensiveness.score(text);
        if score >= annotators.threshold {
            return Ok(IngestOutcome::Rejected {
                headline: headline.to_owned(),
                reason: format!("{what} offensiveness {score:.3} >= {}", annotators.threshold),
            });
        }
    }
    let text = annotation_text(headline, body);
    let entities = annotators.gazetteer.recognize_text(&text);
    let topic = annotators
        .topics
        .detect(&text)
        .unwrap_or(GENERAL_TOPIC)
        .to_owned();
    Ok(IngestOutcome::Stored(KnowledgeItem {
        id: item_id(doc, date),
        headline: headline.to_owned(),
        body: body.to_owned(),
        entities,
        topic,
        published_on: date,
        source: doc.source.clone(),
        score: doc.score,
    }))
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn ingest_document(
        &self,
        doc: &FeedDocument,
        annotators: Annotators<'_>,
        today: NaiveDate,
    ) -> Result<IngestOutcome, KnowledgeError> {
        let outcome = annotate(doc, annotators, today)?;
        if let IngestOutcome::Stored(item) = &outcome {
            self.write().insert(item.clone());
        }
        Ok(outcome)
    }

    /// Ingests a JSON-lines feed as one batch. Bad lines are reported, not fatal.
    pub fn ingest_jsonl(&self, text: &str, annotators: Annotators<'_>, today: NaiveDate) -> IngestReport {
        let mut report = IngestReport::default();
        let mut batch = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: FeedDocument = match serde_json::from_str(line) {
                Ok(d) => d,
                Err(e) => {
                    report.errors.push((line_no, e.to_string()));
                    continue;
                }
            };
            match annotate(&doc, annotators, today) {
                Ok(IngestOutcome::Stored(item)) => batch.push(item),
                Ok(IngestOutcome::Rejected { reason, .. }) => report.rejected.push((line_no, reason)),
                Err(e) => report.errors.push((line_no, e.to_string())),
            }
        }
        report.stored = batch.len();
        let mut inner = self.write();
        for item in batch {
            inner.insert(item);
        }
        report
    }

    pub fn ingest_file(
        &self,
        path: &Path,
        annotators: Annotators<'_>,
        today: NaiveDate,
    ) -> Result<IngestReport, KnowledgeError> {
        let text = std::fs::read_to_string(path)?;
        Ok(self.ingest_jsonl(&text, annotators, today))
    }

    pub fn len(&self) -> usize {
        self.read().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<KnowledgeItem> {
        self.read().items.get(id).cloned()
    }

    /// All items in id order.
    pub fn items(&self) -> Vec<KnowledgeItem> {
        self.read().items.values().cloned().collect()
    }

    pub fn export(&self) -> Vec<Triple> {
        self.read().items.values().flat_map(canonical_triples).collect()
    }

    /// Items sharing an entity or the topic, best first: more entity
    /// overlap, then topic match, then recency, then id.
    pub fn query(
        &self,
        entities: &[EntityMention],
        topic: Option<&str>,
        now: NaiveDate,
    ) -> Vec<(KnowledgeItem, RetrievalScore)> {
        let inner = self.read();
        let mut keys: Vec<&str> = entities.iter().map(|e| e.surface.as_str()).collect();
        keys.sort_unstable();
        keys.dedup();

        let mut overlap: HashMap<&str, usize> = HashMap::new();
        for key in &keys {
            for id in inner.by_entity.get(*key).into_iter().flatten() {
                *overlap.entry(id.as_str()).or_default() += 1;
            }
        }
        let topical: BTreeSet<&str> = topic
            .and_then(|t| inner.by_topic.get(t))
            .into_iter()
            .flatten()
            .map(String::as_str)
            .collect();

        let ids: BTreeSet<&str> = overlap.keys().copied().chain(topical.iter().copied()).collect();
        let mut out: Vec<(KnowledgeItem, RetrievalScore)> = ids
            .into_iter()
            .map(|id| {
                let item = &inner.items[id];
                let score = RetrievalScore {
                    entity_overlap: overlap.get(id).copied().unwrap_or(0),
                    topic_match: u8::from(topical.contains(id)),
                    recency: RetrievalScore::recency_for(item.published_on, now),
                };
                (item.clone(), score)
            })
            .collect();
        out.sort_by(|a, b| compare_ranked(a, b));
        out
    }
}

/// The retrieval order as a comparator, exposed for oracle tests.
pub fn compare_ranked(a: &(KnowledgeItem, RetrievalScore), b: &(KnowledgeItem, RetrievalScore)) -> Ordering {
    b.1.entity_overlap
        .cmp(&a.1.entity_overlap)
        .then(b.1.topic_match.cmp(&a.1.topic_match))
        .then(b.1.recency.total_cmp(&a.1.recency))
        .then(a.0.id.cmp(&b.0.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guardrails::LexiconModel;
    use crate::knowledge::TopicLexicon;
    use crate::nlp::{EntityType, Gazetteer};

    struct Fixture {
        gazetteer: Gazetteer,
        topics: TopicLexicon,
        lexicon: LexiconModel,
    }

    impl Fixture {
        fn new() -> Self {
            let mut gazetteer = Gazetteer::new();
            gazetteer.insert("japan", EntityType::Location);
            gazetteer.insert("china", EntityType::Location);
            gazetteer.insert("europe", EntityType::Location);
            let mut topics = TopicLexicon::default();
            topics.topics.insert("politics".into(), vec!["military".into()]);
            Self {
                gazetteer,
                topics,
                lexicon: LexiconModel::from_lines("darn 1.0\n").unwrap(),
            }
        }

        fn annotators(&self) -> Annotators<'_> {
            Annotators {
                gazetteer: &self.gazetteer,
                topics: &self.topics,
                offensiveness: &self.lexicon,
                threshold: 0.5,
            }
        }
    }

    fn doc(headline: &str, date: &str) -> FeedDocument {
        FeedDocument {
            headline: headline.into(),
            body: String::new(),
            date: date.into(),
            source: "news".into(),
            score: None,
        }
    }

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 6, 30).unwrap()
    }

    #[test]
    fn overlap_then_recency() {
        let f = Fixture::new();
        let store = KnowledgeStore::new();
        for (h, d) in [
            ("Japan urges Europe to have stronger military presence in Asia to counter China", "2021-06-20"),
            ("Japan opens a new stadium", "2021-06-29"),
            ("China launches a rover", "2021-06-01"),
            ("Quiet day in Peru", "2021-06-29"),
        ] {
            store.ingest_document(&doc(h, d), f.annotators(), today()).unwrap();
        }
        let ents = f.gazetteer.recognize_text("i just got back from a trip in japan and china");
        let got = store.query(&ents, None, today());
        assert_eq!(got.len(), 3);
        assert!(got[0].0.headline.starts_with("Japan urges"));
        assert_eq!(got[0].1.entity_overlap, 2);
        assert_eq!(got[1].0.headline, "Japan opens a new stadium");
        assert!(store.query(&[], None, today()).is_empty());
    }

    #[test]
    fn rejections_and_errors() {
        let f = Fixture::new();
        let store = KnowledgeStore::new();
        let out = store.ingest_document(&doc("what a darn shame", "2021-06-01"), f.annotators(), today());
        assert!(matches!(out, Ok(IngestOutcome::Rejected { .. })));
        assert!(matches!(
            store.ingest_document(&doc("  ", "2021-06-01"), f.annotators(), today()),
            Err(KnowledgeError::EmptyHeadline)
        ));
        assert!(matches!(
            store.ingest_document(&doc("later", "2021-07-01"), f.annotators(), today()),
            Err(KnowledgeError::FutureDate { .. })
        ));
        assert!(store.is_empty());
    }

    #[test]
    fn jsonl_batch_reports_lines() {
        let f = Fixture::new();
        let store = KnowledgeStore::new();
        let text = concat!(
            r#"{"headline":"Japan news","date":"2021-06-01","source":"news"}"#,
            "\nnot json\n",
            r#"{"headline":"darn darn","date":"2021-06-01","source":"news"}"#,
            "\n",
            r#"{"headline":"x","date":"06/01/2021","source":"news"}"#,
        );
        let report = store.ingest_jsonl(text, f.annotators(), today());
        assert_eq!(report.stored, 1);
        assert_eq!(report.rejected.iter().map(|r| r.0).collect::<Vec<_>>(), vec![3]);
        assert_eq!(report.errors.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn reingest_is_idempotent() {
        let f = Fixture::new();
        let store = KnowledgeStore::new();
        let d = doc("Japan news", "2021-06-01");
        store.ingest_document(&d, f.annotators(), today()).unwrap();
        store.ingest_document(&d, f.annotators(), today()).unwrap();
        assert_eq!(store.len(), 1);
        let ents = f.gazetteer.recognize_text("japan");
        assert_eq!(store.query(&ents, None, today()).len(), 1);
    }

    #[test]
    fn recency_is_linear_and_clamped() {
        let now = today();
        let d = |n| now - chrono::Days::new(n);
        assert_eq!(RetrievalScore::recency_for(now, now), 1.0);
        assert!((RetrievalScore::recency_for(d(15), now) - 0.5).abs() < 1e-12);
        assert_eq!(RetrievalScore::recency_for(d(45), now), 0.0);
    }
}
