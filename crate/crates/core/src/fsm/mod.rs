//! Declarative domain state machines.
//!
//! A user turn moves the machine from the current egress state (or the
//! `ENTRY` pseudo-state) to an ingress state through the first matching
//! guard; the bot then picks an outgoing transition to an egress state by
//! seeded weighted choice and fills its template. When no guard matches the
//! machine steers away and the default dialogue manager takes over.

mod definition;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use definition::{
    template_slots, BotTransition, BotTransitionDef, FsmDefinition, FsmDocument, Guard, GuardDef,
    GuardMatch, KnowledgeBy, KnowledgeSpec, Slot, StateDef, StateKind, UserTransition,
    UserTransitionDef, ENTRY,
};

use crate::knowledge::{KnowledgeItem, KnowledgeStore};
use crate::nlp::{EntityMention, IntentResult, Utterance};

#[derive(Debug, thiserror::Error)]
pub enum FsmError {
    #[error("fsm document: {0}")]
    Parse(String),
    #[error("fsm `{domain}`: {element}: {reason}")]
    Invalid {
        domain: String,
        element: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserMentioned,
    BotSuggested,
    Discussed,
}

/// Entities a session has touched in one domain, keyed by surface.
pub type DiscussedMemory = BTreeMap<String, Provenance>;

fn mark(memory: &mut DiscussedMemory, key: &str, p: Provenance) {
    let slot = memory.entry(key.to_owned()).or_insert(p);
    if p > *slot {
        *slot = p;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmRuntimeState {
    pub domain: String,
    pub current_egress: String,
    pub discussed: DiscussedMemory,
    pub turn_count_in_domain: usize,
    pub spoken_headlines: BTreeSet<String>,
}

/// Per-turn inputs the machine reads.
#[derive(Debug, Clone, Copy)]
pub struct StepFeatures<'a> {
    pub utterance: &'a Utterance,
    pub intent: &'a IntentResult,
    pub entities: &'a [EntityMention],
    pub profile_name: Option<&'a str>,
    pub today: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmResponse {
    pub text: String,
    pub ingress: String,
    pub egress: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepResult {
    Response {
        response: FsmResponse,
        runtime: FsmRuntimeState,
    },
    SteerAway,
}

/// Finds a definition whose entry intents include the turn's intent and
/// whose `ENTRY` guards match. Definitions are tried in order.
pub fn try_enter<'d>(
    features: StepFeatures<'_>,
    definitions: &'d [FsmDefinition],
) -> Option<(&'d FsmDefinition, String, GuardMatch)> {
    definitions
        .iter()
        .filter(|d| d.entry_intents.contains(&features.intent.intent_name))
        .find_map(|d| {
            d.resolve_ingress(ENTRY, features.utterance, features.intent, features.entities)
                .map(|(t, m)| (d, t.to.clone(), m))
        })
}

/// Enters `def` and produces the first response. `memory` and `spoken`
/// carry what earlier engagements with this domain left behind.
pub fn enter(
    def: &FsmDefinition,
    features: StepFeatures<'_>,
    memory: DiscussedMemory,
    spoken: BTreeSet<String>,
    knowledge: Option<&KnowledgeStore>,
    rng_seed: u64,
) -> StepResult {
    let Some((ingress, gm)) = def
        .resolve_ingress(ENTRY, features.utterance, features.intent, features.entities)
        .map(|(t, m)| (t.to.clone(), m))
    else {
        return StepResult::SteerAway;
    };
    let runtime = FsmRuntimeState {
        domain: def.domain.clone(),
        current_egress: String::new(),
        discussed: memory,
        turn_count_in_domain: 0,
        spoken_headlines: spoken,
    };
    respond(def, runtime, &ingress, gm, features, knowledge, rng_seed)
}

/// Advances a running machine by one user turn.
pub fn step(
    def: &FsmDefinition,
    runtime: &FsmRuntimeState,
    features: StepFeatures<'_>,
    knowledge: Option<&KnowledgeStore>,
    rng_seed: u64,
) -> StepResult {
    debug_assert_eq!(def.kind_of(&runtime.current_egress), Some(StateKind::Egress));
    let Some((ingress, gm)) = def
        .resolve_ingress(&runtime.current_egress, features.utterance, features.intent, features.entities)
        .map(|(t, m)| (t.to.clone(), m))
    else {
        return StepResult::SteerAway;
    };
    respond(def, runtime.clone(), &ingress, gm, features, knowledge, rng_seed)
}

struct Choice {
    transition: usize,
    /// Filled templates and whether each spoke the knowledge headline.
    texts: Vec<(String, bool)>,
    item: Option<KnowledgeItem>,
    bound: Option<String>,
}

fn respond(
    def: &FsmDefinition,
    mut runtime: FsmRuntimeState,
    ingress: &str,
    gm: GuardMatch,
    features: StepFeatures<'_>,
    knowledge: Option<&KnowledgeStore>,
    rng_seed: u64,
) -> StepResult {
    let mut options: Vec<Choice> = Vec::new();
    for (i, t) in def.bot_transitions.iter().enumerate().filter(|(_, t)| t.from == ingress) {
        let (item, bound) = match &t.knowledge {
            Some(spec) => match lookup(def, spec, &gm, &runtime, features, knowledge) {
                Some(found) => (Some(found.0), found.1),
                None => continue,
            },
            None => (None, None),
        };
        let texts: Vec<(String, bool)> = t
            .templates
            .iter()
            .filter_map(|tpl| {
                fill(tpl, &gm, item.as_ref(), bound.as_deref(), features.profile_name)
                    .map(|text| (text, tpl.contains("{knowledge.headline}")))
            })
            .collect();
        if !texts.is_empty() {
            options.push(Choice {
                transition: i,
                texts,
                item,
                bound,
            });
        }
    }
    if options.is_empty() {
        return StepResult::SteerAway;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let total: f64 = options.iter().map(|o| def.bot_transitions[o.transition].weight).sum();
    let mut x = rng.random_range(0.0..total);
    let mut chosen = options.len() - 1;
    for (k, o) in options.iter().enumerate() {
        let w = def.bot_transitions[o.transition].weight;
        if x < w {
            chosen = k;
            break;
        }
        x -= w;
    }
    let choice = options.swap_remove(chosen);
    let (text, spoke_headline) = choice.texts[rng.random_range(0..choice.texts.len())].clone();
    let transition = &def.bot_transitions[choice.transition];

    for e in features.entities {
        mark(&mut runtime.discussed, &e.surface, Provenance::UserMentioned);
    }
    if let Some(spec) = &transition.knowledge {
        match spec.by {
            KnowledgeBy::Entity => {
                if let Some(e) = &gm.entity {
                    mark(&mut runtime.discussed, &e.surface, Provenance::Discussed);
                }
            }
            KnowledgeBy::Topic => {
                if let Some(b) = &choice.bound {
                    mark(&mut runtime.discussed, b, Provenance::BotSuggested);
                }
            }
        }
    }
    if let (Some(item), true) = (&choice.item, spoke_headline) {
        runtime.spoken_headlines.insert(item.headline.clone());
    }
    runtime.current_egress = transition.to.clone();
    runtime.turn_count_in_domain += 1;
    StepResult::Response {
        response: FsmResponse {
            text,
            ingress: ingress.to_owned(),
            egress: transition.to.clone(),
            knowledge_id: choice.item.map(|i| i.id),
        },
        runtime,
    }
}

fn lookup(
    def: &FsmDefinition,
    spec: &KnowledgeSpec,
    gm: &GuardMatch,
    runtime: &FsmRuntimeState,
    features: StepFeatures<'_>,
    knowledge: Option<&KnowledgeStore>,
) -> Option<(KnowledgeItem, Option<String>)> {
    let store = knowledge?;
    let topic = spec.topic.as_deref().unwrap_or(&def.domain);
    let bind = |item: &KnowledgeItem| -> Option<Option<String>> {
        let Some(ty) = spec.entity_type else {
            return Some(None);
        };
        item.entities
            .iter()
            .filter(|e| e.entity_type == ty)
            .find(|e| !spec.fresh || !runtime.discussed.contains_key(&e.surface))
            .map(|e| Some(e.surface.clone()))
    };
    let ranked = match spec.by {
        KnowledgeBy::Entity => {
            let entity = gm.entity.as_ref()?;
            store.query(std::slice::from_ref(entity), Some(topic), features.today)
        }
        KnowledgeBy::Topic => store.query(&[], Some(topic), features.today),
    };
    ranked
        .into_iter()
        .filter(|(_, s)| spec.by == KnowledgeBy::Topic || s.entity_overlap > 0)
        .filter(|(item, _)| !runtime.spoken_headlines.contains(&item.headline))
        .find_map(|(item, _)| bind(&item).map(|b| (item, b)))
}

fn fill(
    template: &str,
    gm: &GuardMatch,
    item: Option<&KnowledgeItem>,
    bound: Option<&str>,
    profile_name: Option<&str>,
) -> Option<String> {
    let mut out = template.to_owned();
    for name in template_slots(template) {
        let value = match Slot::parse(name)? {
            Slot::Echo => gm.echo.clone()?,
            Slot::Entity => gm.entity.as_ref()?.surface.clone(),
            Slot::KnowledgeHeadline => item?.headline.clone(),
            Slot::KnowledgeEntity => bound?.to_owned(),
            Slot::ProfileName => profile_name?.to_owned(),
        };
        out = out.replace(&format!("{{{name}}}"), &value);
    }
    Some(out)
}
