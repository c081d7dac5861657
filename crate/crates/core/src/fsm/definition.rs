use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::FsmError;
use crate::nlp::{EntityMention, EntityType, IntentResult, Utterance};

/// Pseudo-state user transitions start from when entering a domain.
pub const ENTRY: &str = "ENTRY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Ingress,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDef {
    pub name: String,
    pub kind: StateKind,
}

/// All present fields must match. `pattern` is anchored over the ASR-shaped
/// utterance; a named group `echo` feeds the `{echo}` slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<EntityType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTransitionDef {
    pub from: String,
    pub to: String,
    pub guard: GuardDef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeBy {
    /// Items sharing the matched user entity.
    Entity,
    /// Most recent items on the topic.
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSpec {
    pub by: KnowledgeBy,
    /// Defaults to the domain name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    /// Type of the item entity bound to `{knowledge.entity}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<EntityType>,
    /// Skip items whose bound entity this session already knows about.
    #[serde(default)]
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotTransitionDef {
    pub from: String,
    pub to: String,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    pub templates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeSpec>,
}

fn unit_weight() -> f64 {
    1.0
}

/// The raw document shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmDocument {
    pub domain: String,
    pub entry_intents: Vec<String>,
    pub states: Vec<StateDef>,
    pub user_transitions: Vec<UserTransitionDef>,
    pub bot_transitions: Vec<BotTransitionDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Echo,
    Entity,
    KnowledgeHeadline,
    KnowledgeEntity,
    ProfileName,
}

impl Slot {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "echo" => Slot::Echo,
            "entity" => Slot::Entity,
            "knowledge.headline" => Slot::KnowledgeHeadline,
            "knowledge.entity" => Slot::KnowledgeEntity,
            "profile.name" => Slot::ProfileName,
            _ => return None,
        })
    }

    pub fn needs_knowledge(self) -> bool {
        matches!(self, Slot::KnowledgeHeadline | Slot::KnowledgeEntity)
    }
}

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([^{}]*)\}").expect("valid slot regex"));

/// Distinct slot names in order of first appearance.
pub fn template_slots(template: &str) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for c in SLOT.captures_iter(template) {
        let name = c.get(1).map_or("", |m| m.as_str());
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Guard {
    pub intent: Option<String>,
    pub entity_type: Option<EntityType>,
    pub pattern: Option<Regex>,
}

/// What a matched guard captured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuardMatch {
    pub echo: Option<String>,
    pub entity: Option<EntityMention>,
}

impl Guard {
    pub fn matches(&self, utterance: &Utterance, intent: &IntentResult, entities: &[EntityMention]) -> Option<GuardMatch> {
        if let Some(label) = &self.intent {
            if &intent.intent_name != label {
                return None;
            }
        }
        let entity = match self.entity_type {
            Some(ty) => Some(entities.iter().find(|e| e.entity_type == ty)?.clone()),
            None => entities.first().cloned(),
        };
        let echo = match &self.pattern {
            Some(re) => {
                let caps = re.captures(&utterance.raw_text)?;
                caps.name("echo").map(|m| m.as_str().trim().to_owned()).filter(|s| !s.is_empty())
            }
            None => None,
        };
        Some(GuardMatch { echo, entity })
    }
}

#[derive(Debug, Clone)]
pub struct UserTransition {
    pub from: String,
    pub to: String,
    pub guard: Guard,
}

#[derive(Debug, Clone)]
pub struct BotTransition {
    pub from: String,
    pub to: String,
    pub weight: f64,
    pub templates: Vec<String>,
    pub knowledge: Option<KnowledgeSpec>,
}

/// A validated domain state machine.
#[derive(Debug, Clone)]
pub struct FsmDefinition {
    pub domain: String,
    pub entry_intents: Vec<String>,
    states: Vec<StateDef>,
    kinds: HashMap<String, StateKind>,
    pub user_transitions: Vec<UserTransition>,
    pub bot_transitions: Vec<BotTransition>,
}

impl FsmDefinition {
    pub fn from_toml(text: &str) -> Result<Self, FsmError> {
        let doc: FsmDocument = toml::from_str(text).map_err(|e| FsmError::Parse(e.to_string()))?;
        Self::load(doc)
    }

    pub fn load(doc: FsmDocument) -> Result<Self, FsmError> {
        let domain = doc.domain.clone();
        let invalid = |element: String, reason: &str| FsmError::Invalid {
            domain: domain.clone(),
            element,
            reason: reason.to_owned(),
        };
        if doc.entry_intents.is_empty() {
            return Err(invalid("entry_intents".into(), "no entry intents"));
        }
        let mut kinds = HashMap::new();
        for s in &doc.states {
            if s.name == ENTRY {
                return Err(invalid(format!("state {ENTRY}"), "reserved name"));
            }
            if kinds.insert(s.name.clone(), s.kind).is_some() {
                return Err(invalid(format!("state {}", s.name), "duplicate state"));
            }
        }

        let mut user_transitions = Vec::new();
        for (i, t) in doc.user_transitions.iter().enumerate() {
            let element = format!("user_transitions[{i}] {} -> {}", t.from, t.to);
            if t.from != ENTRY && kinds.get(&t.from) != Some(&StateKind::Egress) {
                return Err(invalid(element, "must start at ENTRY or an egress state"));
            }
            if kinds.get(&t.to) != Some(&StateKind::Ingress) {
                return Err(invalid(element, "must land on an ingress state"));
            }
            let g = &t.guard;
            if g.intent.is_none() && g.entity_type.is_none() && g.pattern.is_none() {
                return Err(invalid(element, "guard is empty"));
            }
            if t.from == ENTRY {
                if let Some(label) = &g.intent {
                    if !doc.entry_intents.contains(label) {
                        return Err(invalid(element, "entry guard intent is not an entry intent"));
                    }
                }
            }
            let pattern = g
                .pattern
                .as_deref()
                .map(|p| Regex::new(&format!("^(?:{p})$")))
                .transpose()
                .map_err(|e| invalid(element.clone(), &format!("bad pattern: {e}")))?;
            user_transitions.push(UserTransition {
                from: t.from.clone(),
                to: t.to.clone(),
                guard: Guard {
                    intent: g.intent.clone(),
                    entity_type: g.entity_type,
                    pattern,
                },
            });
        }

        let mut bot_transitions = Vec::new();
        for (i, t) in doc.bot_transitions.iter().enumerate() {
            let element = format!("bot_transitions[{i}] {} -> {}", t.from, t.to);
            if kinds.get(&t.from) != Some(&StateKind::Ingress) {
                return Err(invalid(element, "must start at an ingress state"));
            }
            if kinds.get(&t.to) != Some(&StateKind::Egress) {
                return Err(invalid(element, "must land on an egress state"));
            }
            if t.templates.is_empty() {
                return Err(invalid(element, "no templates"));
            }
            if !(t.weight > 0.0 && t.weight.is_finite()) {
                return Err(invalid(element, "weight must be positive"));
            }
            for template in &t.templates {
                for name in template_slots(template) {
                    let slot = Slot::parse(name)
                        .ok_or_else(|| invalid(format!("{element} template `{template}`"), &format!("unknown slot {{{name}}}")))?;
                    if slot.needs_knowledge() && t.knowledge.is_none() {
                        return Err(invalid(
                            format!("{element} template `{template}`"),
                            &format!("slot {{{name}}} without knowledge metadata"),
                        ));
                    }
                    if slot == Slot::KnowledgeEntity
                        && t.knowledge.as_ref().is_some_and(|k| k.entity_type.is_none())
                    {
                        return Err(invalid(
                            format!("{element} template `{template}`"),
                            "slot {knowledge.entity} needs knowledge.entity_type",
                        ));
                    }
                }
            }
            bot_transitions.push(BotTransition {
                from: t.from.clone(),
                to: t.to.clone(),
                weight: t.weight,
                templates: t.templates.clone(),
                knowledge: t.knowledge.clone(),
            });
        }

        for s in &doc.states {
            let has_out = match s.kind {
                StateKind::Ingress => bot_transitions.iter().any(|t| t.from == s.name),
                StateKind::Egress => user_transitions.iter().any(|t| t.from == s.name),
            };
            if !has_out {
                return Err(invalid(format!("state {}", s.name), "no outgoing transition"));
            }
        }

        let mut reached: HashSet<&str> = HashSet::new();
        let mut queue = VecDeque::from([ENTRY]);
        while let Some(state) = queue.pop_front() {
            let next = user_transitions
                .iter()
                .filter(|t| t.from == state)
                .map(|t| t.to.as_str())
                .chain(bot_transitions.iter().filter(|t| t.from == state).map(|t| t.to.as_str()));
            for n in next {
                if reached.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        if let Some(s) = doc.states.iter().find(|s| !reached.contains(s.name.as_str())) {
            return Err(invalid(format!("state {}", s.name), "unreachable from ENTRY"));
        }

        Ok(Self {
            domain: doc.domain,
            entry_intents: doc.entry_intents,
            states: doc.states,
            kinds,
            user_transitions,
            bot_transitions,
        })
    }

    pub fn states(&self) -> &[StateDef] {
        &self.states
    }

    pub fn kind_of(&self, state: &str) -> Option<StateKind> {
        self.kinds.get(state).copied()
    }

    pub fn state_names(&self) -> BTreeSet<&str> {
        self.states.iter().map(|s| s.name.as_str()).collect()
    }

    /// Name generated responses carry, e.g. `MOVIES_RESPONSE`.
    pub fn source_name(&self) -> String {
        format!("{}_RESPONSE", self.domain.to_uppercase())
    }

    /// First user transition out of `from` whose guard matches.
    pub fn resolve_ingress(
        &self,
        from: &str,
        utterance: &Utterance,
        intent: &IntentResult,
        entities: &[EntityMention],
    ) -> Option<(&UserTransition, GuardMatch)> {
        self.user_transitions
            .iter()
            .filter(|t| t.from == from)
            .find_map(|t| t.guard.matches(utterance, intent, entities).map(|m| (t, m)))
    }
}
