use std::collections::BTreeSet;

use genrank::fsm::{self, DiscussedMemory, FsmDefinition, FsmRuntimeState, StateKind, StepFeatures, StepResult};
use genrank::guardrails::fnv1a;
use genrank::nlp::Utterance;
use genrank::service::Resources;
use rand::{Rng, SeedableRng};

use super::{data_dir, today};

/// Per-turn seeds for the three-turn script.
pub const FIG6_SEED: u64 = 24;

pub fn load(name: &str) -> FsmDefinition {
    FsmDefinition::from_toml(&std::fs::read_to_string(data_dir().join("fsm").join(name)).unwrap()).unwrap()
}

pub struct Walker<'r> {
    pub res: &'r Resources,
    pub def: FsmDefinition,
    pub runtime: Option<FsmRuntimeState>,
    pub memory: DiscussedMemory,
}

impl<'r> Walker<'r> {
    pub fn new(res: &'r Resources, def: FsmDefinition) -> Self {
        Walker {
            res,
            def,
            runtime: None,
            memory: DiscussedMemory::new(),
        }
    }

    pub fn turn(&mut self, text: &str, seed: u64) -> Option<fsm::FsmResponse> {
        let u = Utterance::new(text, 0);
        let intent = self.res.classifier.classify(&u);
        let entities = self.res.gazetteer.recognize(&u);
        let f = StepFeatures {
            utterance: &u,
            intent: &intent,
            entities: &entities,
            profile_name: None,
            today: today(),
        };
        let store = Some(self.res.knowledge.as_ref());
        let result = match &self.runtime {
            Some(rt) => fsm::step(&self.def, rt, f, store, seed),
            None => {
                if fsm::try_enter(f, std::slice::from_ref(&self.def)).is_none() {
                    return None;
                }
                fsm::enter(&self.def, f, self.memory.clone(), BTreeSet::new(), store, seed)
            }
        };
        match result {
            StepResult::Response { response, runtime } => {
                self.runtime = Some(runtime);
                Some(response)
            }
            StepResult::SteerAway => {
                if let Some(rt) = self.runtime.take() {
                    self.memory = rt.discussed;
                }
                None
            }
        }
    }
}

pub const FIG6: [&str; 3] = ["lets talk about movies", "i love thrillers", "silence of the lambs"];

pub fn fig6(res: &Resources, seed: u64) -> Vec<Option<fsm::FsmResponse>> {
    let mut w = Walker::new(res, load("movies.toml"));
    FIG6.iter()
        .enumerate()
        .map(|(i, t)| w.turn(t, fnv1a(seed, &[i as u8])))
        .collect()
}

const WALK_POOL: [&str; 17] = [
    "lets talk about movies",
    "can we chat about movies",
    "yes",
    "no",
    "sure",
    "not really",
    "i love thrillers",
    "i like comedies",
    "deadpool two",
    "have you seen hamilton",
    "anthony hopkins",
    "zazie beetz is great",
    "what's the weather",
    "lets talk about sports",
    "silence of the lambs",
    "i like horror movies",
    "hmm",
];

/// Feeds random pool lines to the Movies machine; returns (responses, steer-aways).
pub fn random_walk(res: &Resources, steps: u64, seed: u64) -> Result<(usize, usize), String> {
    let def = load("movies.toml");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut w = Walker::new(res, def.clone());
    let (mut responses, mut steer) = (0, 0);
    for i in 0..steps {
        let text = WALK_POOL[rng.random_range(0..WALK_POOL.len())];
        let Some(r) = w.turn(text, i) else {
            steer += 1;
            continue;
        };
        responses += 1;
        if def.kind_of(&r.ingress) != Some(StateKind::Ingress) || def.kind_of(&r.egress) != Some(StateKind::Egress) {
            return Err(format!("step {i}: invalid state pair in {r:?}"));
        }
        if w.runtime.as_ref().map(|rt| rt.current_egress.as_str()) != Some(r.egress.as_str()) {
            return Err(format!("step {i}: runtime egress diverged from {}", r.egress));
        }
        if r.text.contains('{') {
            return Err(format!("step {i}: unfilled slot in {:?}", r.text));
        }
    }
    Ok((responses, steer))
}
