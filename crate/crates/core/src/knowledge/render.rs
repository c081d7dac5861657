use std::collections::HashSet;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, NaiveDate};

use super::{KnowledgeError, KnowledgeItem, KnowledgeStore};
use crate::generators::{seeded_index, Candidate, GeneratorKind, LocalGenerator, TurnContext};

pub const VIKG_SOURCE: &str = "VIKG-RG";

/// Fills a seeded template choice with the item's headline. Returns
/// `Ok(None)` when the headline was already spoken this session.
pub fn render_knowledge_response(
    item: &KnowledgeItem,
    templates: &[String],
    rng_seed: u64,
    spoken: &HashSet<String>,
) -> Result<Option<String>, KnowledgeError> {
    if templates.is_empty() {
        return Err(KnowledgeError::Config("no knowledge templates".into()));
    }
    if spoken.contains(&item.headline) {
        return Ok(None);
    }
    let template = &templates[seeded_index(rng_seed, templates.len())];
    Ok(Some(template.replace("{headline}", &item.headline)))
}

/// UTC calendar day of a millisecond timestamp.
pub fn date_of(ms: i64) -> NaiveDate {
    DateTime::from_timestamp_millis(ms)
        .map(|d| d.date_naive())
        .unwrap_or_default()
}

/// Renders the best unspoken retrieved item.
pub struct VikgGenerator {
    pub store: Arc<KnowledgeStore>,
    pub templates: Vec<String>,
}

#[async_trait]
impl LocalGenerator for VikgGenerator {
    async fn generate(&self, ctx: &TurnContext) -> Vec<Candidate> {
        let ranked = self
            .store
            .query(&ctx.entities, ctx.topic.as_deref(), date_of(ctx.now_ms));
        for (item, _) in ranked {
            match render_knowledge_response(&item, &self.templates, ctx.seed, &ctx.spoken_headlines) {
                Ok(Some(text)) => {
                    return Candidate::new(&text, VIKG_SOURCE, GeneratorKind::KnowledgeTemplate, 0)
                        .map(|c| c.with_knowledge(item.id))
                        .into_iter()
                        .collect();
                }
                Ok(None) => continue,
                Err(e) => {
                    tracing::warn!(error = %e, "knowledge rendering disabled");
                    return Vec::new();
                }
            }
        }
        Vec::new()
    }
}
