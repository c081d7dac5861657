//! Triple encoding of knowledge items and its TSV export format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{KnowledgeError, KnowledgeItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    HasTopic,
    MentionsEntity,
    HasTitle,
    HasBody,
    PublishedOn,
    HasScore,
    InstanceOf,
}

impl Predicate {
    pub const ALL: [Predicate; 7] = [
        Predicate::HasTopic,
        Predicate::MentionsEntity,
        Predicate::HasTitle,
        Predicate::HasBody,
        Predicate::PublishedOn,
        Predicate::HasScore,
        Predicate::InstanceOf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::HasTopic => "has_topic",
            Predicate::MentionsEntity => "mentions_entity",
            Predicate::HasTitle => "has_title",
            Predicate::HasBody => "has_body",
            Predicate::PublishedOn => "published_on",
            Predicate::HasScore => "has_score",
            Predicate::InstanceOf => "instance_of",
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Predicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Predicate::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown predicate `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Object {
    Node(String),
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: Predicate,
    pub object: Object,
}

impl Triple {
    fn node(s: &str, p: Predicate, o: String) -> Self {
        Self {
            subject: s.to_owned(),
            predicate: p,
            object: Object::Node(o),
        }
    }

    fn literal(s: &str, p: Predicate, o: String) -> Self {
        Self {
            subject: s.to_owned(),
            predicate: p,
            object: Object::Literal(o),
        }
    }
}

pub fn topic_node(topic: &str) -> String {
    format!("topic:{topic}")
}

pub fn entity_node(surface: &str) -> String {
    format!("entity:{}", surface.replace(' ', "_"))
}

/// The item's triples in a fixed order: class membership, title, body, date,
/// score, topic, then one mention edge and one type edge per distinct entity.
pub fn canonical_triples(item: &KnowledgeItem) -> Vec<Triple> {
    let id = item.id.as_str();
    let mut out = vec![
        Triple::node(id, Predicate::InstanceOf, format!("class:{}_post", item.source)),
        Triple::literal(id, Predicate::HasTitle, item.headline.clone()),
    ];
    if !item.body.is_empty() {
        out.push(Triple::literal(id, Predicate::HasBody, item.body.clone()));
    }
    out.push(Triple::literal(id, Predicate::PublishedOn, item.published_on.to_string()));
    if let Some(score) = item.score {
        out.push(Triple::literal(id, Predicate::HasScore, score.to_string()));
    }
    out.push(Triple::node(id, Predicate::HasTopic, topic_node(&item.topic)));
    for key in item.entity_keys() {
        out.push(Triple::node(id, Predicate::MentionsEntity, entity_node(&key)));
    }
    for key in item.entity_keys() {
        let ty = item
            .entities
            .iter()
            .find(|e| e.surface == key)
            .map(|e| e.entity_type)
            .expect("key came from entities");
        out.push(Triple::node(&entity_node(&key), Predicate::InstanceOf, format!("type:{ty}")));
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let inner = s
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .ok_or("literal not quoted")?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('"') => out.push('"'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

/// One `subject<TAB>predicate<TAB>object` line per triple. Literals are
/// double-quoted with backslash escapes; nodes are bare.
pub fn to_tsv(triples: &[Triple]) -> String {
    let mut out = String::new();
    for t in triples {
        let object = match &t.object {
            Object::Node(n) => n.clone(),
            Object::Literal(l) => escape(l),
        };
        out.push_str(&format!("{}\t{}\t{}\n", t.subject, t.predicate, object));
    }
    out
}

pub fn parse_tsv(text: &str) -> Result<Vec<Triple>, KnowledgeError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| KnowledgeError::Parse { line: i + 1, reason };
        let mut parts = line.splitn(3, '\t');
        let (Some(s), Some(p), Some(o)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected three tab-separated fields".into()));
        };
        let predicate = p.parse().map_err(err)?;
        let object = if o.starts_with('"') {
            Object::Literal(unescape(o).map_err(|e| err(e.to_owned()))?)
        } else {
            Object::Node(o.to_owned())
        };
        out.push(Triple {
            subject: s.to_owned(),
            predicate,
            object,
        });
    }
    Ok(out)
}
