//! The engine's single configuration document and the resources built from it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::fsm::FsmDefinition;
use crate::generators::rules::SENSITIVE_SOURCE;
use crate::generators::{
    EchoGenerator, EnabledWhen, FailingGenerator, FallbackGenerator, FanoutPolicy, FavoriteGenerator,
    FixtureQaClient, GeneratorKind, GeneratorSpec, HttpGenerator, PersonaTable, QaClient, QaGenerator,
    QuestionGate, RandomLatencyGenerator, Registry, RemoteGenerator, ResponseTemplates,
};
use crate::guardrails::{
    Embedder, GuardrailConfig, Guardrails, HashedBowEmbedder, LexiconModel, DEFAULT_HASH_SEED,
};
use crate::knowledge::{Annotators, IngestReport, KnowledgeStore, TopicLexicon, VikgGenerator, INGEST_OFFENSIVE_THRESHOLD};
use crate::nlp::{Gazetteer, IntentClassifier, IntentConfig};
use crate::ranker::{EvaluatorSelector, MockEvaluator, PolyEncoder, PolyEncoderConfig, PriorityTable, Scorer};

pub const DEFAULT_TURN_DEADLINE_MS: u64 = 9000;
/// Hard ceiling on the turn budget.
pub const MAX_TURN_DEADLINE_MS: u64 = 10_000;
/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "GENRANK_CONFIG";

pub const FAVORITE_NAME: &str = "FAVORITE";
pub const FALLBACK_NAME: &str = "FALLBACK";
pub const QA_NAME: &str = "QA";

/// Which scorer picks among surviving candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    #[default]
    Poly,
    ExternalEvaluator,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Paths {
    pub intents: PathBuf,
    pub gazetteer: PathBuf,
    pub topics: PathBuf,
    pub profanity: PathBuf,
    pub persona: PathBuf,
    pub templates: PathBuf,
    #[serde(default)]
    pub fsm: Vec<PathBuf>,
    #[serde(default)]
    pub feeds: Vec<PathBuf>,
    /// Session logs and the profile file live here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dir: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.intents,
            &mut self.gazetteer,
            &mut self.topics,
            &mut self.profanity,
            &mut self.persona,
            &mut self.templates,
        ] {
            fix(p);
        }
        self.fsm.iter_mut().for_each(fix);
        self.feeds.iter_mut().for_each(fix);
        if let Some(p) = &mut self.state_dir {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockSpec {
    Random {
        #[serde(default)]
        seed: u64,
        min_ms: u64,
        max_ms: u64,
        #[serde(default)]
        failure_rate: f64,
        replies: Vec<String>,
    },
    Echo {
        latency_ms: u64,
    },
    Failing {
        #[serde(default)]
        latency_ms: u64,
    },
}

/// One remote generator. Exactly one of `url` and `mock` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub name: String,
    pub n_calls: u32,
    #[serde(default = "one")]
    pub hedge_factor: u32,
    pub deadline_ms: u64,
    #[serde(default = "full")]
    pub min_complete_fraction: f64,
    #[serde(default)]
    pub enabled_when: EnabledWhen,
    #[serde(default)]
    pub with_knowledge: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSpec>,
}

fn one() -> u32 {
    1
}

fn full() -> f64 {
    1.0
}

impl RemoteConfig {
    pub fn policy(&self) -> FanoutPolicy {
        FanoutPolicy::new(self.n_calls, self.hedge_factor, self.deadline_ms, self.min_complete_fraction)
    }

    fn build(&self, seed: u64) -> Result<Arc<dyn RemoteGenerator>, ServiceError> {
        match (&self.url, &self.mock) {
            (Some(url), None) => Ok(Arc::new(
                HttpGenerator::new(url.clone(), Duration::from_millis(self.deadline_ms))
                    .map_err(|e| ServiceError::Config(e.to_string()))?,
            )),
            (None, Some(MockSpec::Random { seed: s, min_ms, max_ms, failure_rate, replies })) => {
                Ok(Arc::new(RandomLatencyGenerator {
                    seed: seed ^ s ^ crate::guardrails::fnv1a(0, self.name.as_bytes()),
                    min_ms: *min_ms,
                    max_ms: *max_ms,
                    failure_rate: *failure_rate,
                    replies: replies.clone(),
                }))
            }
            (None, Some(MockSpec::Echo { latency_ms })) => Ok(Arc::new(EchoGenerator {
                latency: Duration::from_millis(*latency_ms),
            })),
            (None, Some(MockSpec::Failing { latency_ms })) => Ok(Arc::new(FailingGenerator {
                latency: Duration::from_millis(*latency_ms),
            })),
            _ => Err(ServiceError::Config(format!(
                "generator `{}` needs exactly one of `url` and `mock`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub phrase: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QaConfig {
    #[serde(default)]
    pub gate: QuestionGate,
    /// Canned answers served by the built-in fixture client.
    #[serde(default)]
    pub answers: Vec<QaAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(default = "default_deadline")]
    pub turn_deadline_ms: u64,
    /// Budget kept back from the fan-out for guardrails, ranking and persistence.
    #[serde(default = "default_reserve")]
    pub reserve_ms: u64,
    #[serde(default)]
    pub selector: Selector,
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub guardrails: GuardrailConfig,
    #[serde(default)]
    pub poly: PolyEncoderConfig,
    #[serde(default)]
    pub priority: PriorityTable,
    #[serde(default)]
    pub qa: QaConfig,
    #[serde(default)]
    pub generators: Vec<RemoteConfig>,
}

fn default_deadline() -> u64 {
    DEFAULT_TURN_DEADLINE_MS
}

fn default_reserve() -> u64 {
    250
}

impl EngineConfig {
    /// Parses a document; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ServiceError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.paths.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads from the file named by [`CONFIG_ENV`].
    pub fn from_env() -> Result<Self, ServiceError> {
        let path = std::env::var(CONFIG_ENV)
            .map_err(|_| ServiceError::Config(format!("{CONFIG_ENV} is not set")))?;
        Self::load(Path::new(&path))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.turn_deadline_ms == 0 || self.turn_deadline_ms >= MAX_TURN_DEADLINE_MS {
            return Err(ServiceError::Config(format!(
                "turn_deadline_ms {} must be in 1..{MAX_TURN_DEADLINE_MS}",
                self.turn_deadline_ms
            )));
        }
        if self.reserve_ms >= self.turn_deadline_ms {
            return Err(ServiceError::Config("reserve_ms must be below turn_deadline_ms".into()));
        }
        for g in &self.generators {
            g.policy().validate().map_err(|e| ServiceError::Config(format!("{}: {e}", g.name)))?;
        }
        Ok(())
    }
}

/// Everything a turn reads, loaded once and shared by all sessions.
#[derive(Clone)]
pub struct Resources {
    pub classifier: Arc<IntentClassifier>,
    pub gazetteer: Arc<Gazetteer>,
    pub topics: Arc<TopicLexicon>,
    pub lexicon: Arc<LexiconModel>,
    pub embedder: Arc<dyn Embedder>,
    pub guardrails: Guardrails,
    pub templates: Arc<ResponseTemplates>,
    pub fsms: Arc<Vec<FsmDefinition>>,
    pub knowledge: Arc<KnowledgeStore>,
    pub registry: Registry,
    pub poly: Arc<dyn Scorer>,
    pub external: Arc<dyn Scorer>,
    pub priority: PriorityTable,
}

fn read(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Config(format!("{}: {e}", path.display()))
}

impl Resources {
    /// Loads every file named in `config` and ingests the feeds as of `today`.
    pub fn load(config: &EngineConfig, today: NaiveDate) -> Result<(Self, Vec<IngestReport>), ServiceError> {
        let p = &config.paths;
        let classifier = IntentConfig::from_toml(&read(&p.intents)?)
            .and_then(|c| c.validate())
            .map_err(|e| config_err(&p.intents, e))?;
        let gazetteer = Gazetteer::from_tsv(&read(&p.gazetteer)?).map_err(|e| config_err(&p.gazetteer, e))?;
        let topics = TopicLexicon::from_toml(&read(&p.topics)?).map_err(|e| config_err(&p.topics, e))?;
        let lexicon = LexiconModel::from_lines(&read(&p.profanity)?).map_err(|e| config_err(&p.profanity, e))?;
        let persona = PersonaTable::from_toml(&read(&p.persona)?).map_err(|e| config_err(&p.persona, e))?;
        let templates =
            ResponseTemplates::from_toml(&read(&p.templates)?).map_err(|e| config_err(&p.templates, e))?;
        for label in templates.sensitive.keys() {
            if !classifier.has_label(label) {
                tracing::warn!(%label, source = SENSITIVE_SOURCE, "sensitive template without an intent");
            }
        }
        let fsms = p
            .fsm
            .iter()
            .map(|f| FsmDefinition::from_toml(&read(f)?).map_err(|e| config_err(f, e)))
            .collect::<Result<Vec<_>, _>>()?;

        let knowledge = KnowledgeStore::new();
        let mut reports = Vec::new();
        {
            let annotators = Annotators {
                gazetteer: &gazetteer,
                topics: &topics,
                offensiveness: &lexicon,
                threshold: INGEST_OFFENSIVE_THRESHOLD,
            };
            for feed in &p.feeds {
                reports.push(knowledge.ingest_file(feed, annotators, today).map_err(|e| config_err(feed, e))?);
            }
        }

        let embedder: Arc<dyn Embedder> = Arc::new(HashedBowEmbedder::new(config.poly.embed_dim, DEFAULT_HASH_SEED));
        let classifier = Arc::new(classifier);
        let lexicon = Arc::new(lexicon);
        let guardrails = Guardrails {
            config: config.guardrails.clone(),
            embedder: embedder.clone(),
            offensiveness: lexicon.clone(),
            classifier: classifier.clone(),
        };
        let templates = Arc::new(templates);
        let knowledge = Arc::new(knowledge);

        let mut specs = Vec::new();
        for g in &config.generators {
            specs.push(
                GeneratorSpec::remote(&g.name, g.policy(), g.build(config.seed)?)
                    .enabled_when(g.enabled_when)
                    .with_knowledge(g.with_knowledge),
            );
        }
        let qa_client = config
            .qa
            .answers
            .iter()
            .fold(FixtureQaClient::default(), |c, a| c.with(&a.phrase, &a.answer));
        specs.extend(local_generators(
            persona,
            templates.clone(),
            knowledge.clone(),
            config.qa.gate,
            Arc::new(qa_client),
        ));
        let registry = Registry::new(specs).map_err(|e| ServiceError::Config(e.to_string()))?;

        let poly = PolyEncoder::new(config.poly, embedder.clone()).map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok((
            Self {
                classifier,
                gazetteer: Arc::new(gazetteer),
                topics: Arc::new(topics),
                lexicon,
                embedder,
                guardrails,
                templates,
                fsms: Arc::new(fsms),
                knowledge,
                registry,
                poly: Arc::new(poly),
                external: Arc::new(EvaluatorSelector {
                    evaluator: MockEvaluator { seed: config.seed },
                }),
                priority: config.priority.clone(),
            },
            reports,
        ))
    }

    /// Swaps the remote generators, keeping the in-process ones after them.
    pub fn replace_remotes(&mut self, remotes: Vec<GeneratorSpec>) -> Result<(), ServiceError> {
        let locals = self
            .registry
            .specs()
            .iter()
            .filter(|s| s.kind != GeneratorKind::Remote)
            .cloned();
        let specs: Vec<GeneratorSpec> = remotes.into_iter().chain(locals).collect();
        self.registry = Registry::new(specs).map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn scorer(&self, selector: Selector) -> &dyn Scorer {
        match selector {
            Selector::Poly => self.poly.as_ref(),
            Selector::ExternalEvaluator => self.external.as_ref(),
        }
    }
}

/// The in-process generators every engine runs after its remotes:
/// favorites, fallback recovery, knowledge templates and QA.
pub fn local_generators(
    persona: PersonaTable,
    templates: Arc<ResponseTemplates>,
    knowledge: Arc<KnowledgeStore>,
    gate: QuestionGate,
    qa: Arc<dyn QaClient>,
) -> Vec<GeneratorSpec> {
    vec![
        GeneratorSpec::local(FAVORITE_NAME, GeneratorKind::Rule, Arc::new(FavoriteGenerator { persona })),
        GeneratorSpec::local(
            FALLBACK_NAME,
            GeneratorKind::Rule,
            Arc::new(FallbackGenerator {
                templates: templates.clone(),
            }),
        ),
        GeneratorSpec::local(
            crate::knowledge::VIKG_SOURCE,
            GeneratorKind::KnowledgeTemplate,
            Arc::new(VikgGenerator {
                store: knowledge,
                templates: templates.knowledge.clone(),
            }),
        ),
        GeneratorSpec::local(QA_NAME, GeneratorKind::Qa, Arc::new(QaGenerator { gate, client: qa })),
    ]
}
