//! Composition root: loads data, registers skills and boots the engine.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Duration;
use thiserror::Error;
use tracing::debug;

use crate::config::Config;
use crate::dialogue::{BootError, DialogueDocument, DialogueEngine};
use crate::gateway::{AppState, ChannelDescriptor, Clock, FixedClock, Hub, HubConfig, SystemClock};
use crate::logstore::{LogError, LogStore};
use crate::nlu::{pattern_entity_types, tokenize, CorpusDocument, Gazetteer, NluError, NluModel};
use crate::profile::{ProfileError, ProfileStore};
use crate::skill_conference::{
    load_programme, ConferenceSkill, Programme, ProgrammeError, CONFERENCE_SKILL,
};
use crate::skill_poi::{load_catalog, Catalog, CatalogError, PoiSkill, POI_SKILL};
use crate::skills::{CoreSkill, RegistryError, Skill, SkillRegistry};

pub const SEED_CORPUS: &str = include_str!("../data/corpus.json");
pub const SEED_DIALOGUE: &str = include_str!("../data/dialogue.json");
pub const SEED_POI_CATALOG: &str = include_str!("../data/poi_demo.json");
pub const SEED_PROGRAMME: &str = include_str!("../data/prog_small.json");
/// Five-item catalog used by the walkthrough transcript.
pub const POI_SMALL: &str = include_str!("../data/poi_small.json");

#[derive(Debug, Error)]
pub enum AssistantError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error(transparent)]
    Boot(#[from] BootError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Programme(#[from] ProgrammeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Everything the engine is built from.
#[derive(Debug, Clone)]
pub struct AssistantData {
    pub corpus: CorpusDocument,
    pub dialogue: DialogueDocument,
    pub catalog: Catalog,
    pub programme: Programme,
    /// Skills left out of the registry; their rules and forms are dropped too.
    pub disabled_skills: Vec<String>,
}

fn read(path: &Path) -> Result<String, AssistantError> {
    std::fs::read_to_string(path).map_err(|source| AssistantError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl AssistantData {
    /// The shipped seed data.
    pub fn seed() -> Self {
        Self::parse(SEED_CORPUS, SEED_DIALOGUE, SEED_POI_CATALOG, SEED_PROGRAMME)
            .expect("seed data is valid")
    }

    pub fn parse(
        corpus: &str,
        dialogue: &str,
        catalog: &str,
        programme: &str,
    ) -> Result<Self, AssistantError> {
        Ok(Self {
            corpus: CorpusDocument::from_json(corpus)?,
            dialogue: DialogueDocument::from_json(dialogue)?,
            catalog: load_catalog(catalog)?,
            programme: load_programme(programme)?,
            disabled_skills: Vec::new(),
        })
    }

    /// Seed data with any files named in the config substituted.
    pub fn from_config(cfg: &Config) -> Result<Self, AssistantError> {
        let load = |p: &Option<PathBuf>, seed: &'static str| -> Result<String, AssistantError> {
            match p {
                Some(p) => read(p),
                None => Ok(seed.to_string()),
            }
        };
        Self::parse(
            &load(&cfg.corpus, SEED_CORPUS)?,
            &load(&cfg.dialogue, SEED_DIALOGUE)?,
            &load(&cfg.poi_catalog, SEED_POI_CATALOG)?,
            &load(&cfg.programme, SEED_PROGRAMME)?,
        )
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn without_skill(mut self, skill: &str) -> Self {
        self.disabled_skills.push(skill.to_string());
        self
    }

    fn skills(&self) -> Vec<Arc<dyn Skill>> {
        let all: Vec<Arc<dyn Skill>> = vec![
            Arc::new(PoiSkill::new(self.catalog.clone())),
            Arc::new(ConferenceSkill::new(self.programme.clone())),
        ];
        all.into_iter()
            .filter(|s| !self.disabled_skills.contains(&s.descriptor().name))
            .collect()
    }

    /// Corpus gazetteers first (they win ties), then skill-derived entries
    /// whose surface form is not already known for that entity type.
    pub fn gazetteers(&self) -> Vec<Gazetteer> {
        let mut out = self.corpus.gazetteers.clone();
        for derived in self.skills().iter().flat_map(|s| s.gazetteers()) {
            let idx = match out
                .iter()
                .position(|g| g.entity_type == derived.entity_type)
            {
                Some(i) => i,
                None => {
                    out.push(Gazetteer::new(derived.entity_type.clone()));
                    out.len() - 1
                }
            };
            for e in derived.entries {
                let key = tokenize(&e.surface);
                if key.is_empty() || out[idx].entries.iter().any(|x| tokenize(&x.surface) == key) {
                    continue;
                }
                out[idx].entries.push(e);
            }
        }
        out.retain(|g| !g.entries.is_empty());
        out
    }

    /// Patterns naming an entity type with no gazetteer (e.g. of a disabled
    /// skill) are dropped rather than rejected.
    pub fn build_nlu(&self, threshold: f64) -> Result<NluModel, AssistantError> {
        let gazetteers = self.gazetteers();
        let known: HashSet<&str> = gazetteers.iter().map(|g| g.entity_type.as_str()).collect();
        let mut intents = self.corpus.intents.clone();
        for intent in &mut intents {
            intent.patterns.retain(|p| {
                let missing = pattern_entity_types(p).find(|t| !known.contains(t));
                if let Some(t) = missing {
                    debug!(intent = %intent.name, pattern = %p, entity_type = t, "pattern dropped");
                }
                missing.is_none()
            });
        }
        Ok(NluModel::compile(&intents, &gazetteers, threshold)?)
    }

    pub fn build_engine(
        &self,
        threshold: f64,
        profiles: Arc<ProfileStore>,
        log: Arc<LogStore>,
    ) -> Result<DialogueEngine, AssistantError> {
        let nlu = self.build_nlu(threshold)?;
        let mut registry = SkillRegistry::new(Arc::new(CoreSkill::default()))?;
        for s in self.skills() {
            registry.register(s)?;
        }
        let mut doc = self.dialogue.clone();
        for s in &self.disabled_skills {
            doc = doc.without_skill(s);
        }
        Ok(DialogueEngine::boot(nlu, doc, registry, profiles, log)?)
    }
}

/// Names of the built-in skills besides Core.
pub const DOMAIN_SKILLS: [&str; 2] = [POI_SKILL, CONFERENCE_SKILL];

/// In-memory engine over the seed data; convenient for examples and tests.
pub fn seed_engine() -> DialogueEngine {
    AssistantData::seed()
        .build_engine(
            crate::nlu::DEFAULT_THRESHOLD,
            Arc::new(ProfileStore::in_memory()),
            Arc::new(LogStore::in_memory()),
        )
        .expect("seed data boots")
}

pub fn hub_config(cfg: &Config) -> HubConfig {
    HubConfig {
        capacity: cfg.capacity,
        idle_ttl: Duration::seconds(cfg.session_ttl_secs as i64),
        rest_channel: ChannelDescriptor::rest_with_cards(cfg.rest_rich_cards),
    }
}

/// Opens the stores under `log_dir`, boots the engine and wires the gateway.
pub fn boot(cfg: &Config) -> Result<AppState, AssistantError> {
    let data = AssistantData::from_config(cfg)?;
    let profiles = Arc::new(ProfileStore::open(&cfg.log_dir)?);
    let log = Arc::new(LogStore::open(&cfg.log_dir)?);
    let engine = Arc::new(data.build_engine(cfg.threshold, profiles, log)?);
    let clock: Arc<dyn Clock> = match cfg.fixed_time {
        Some(t) => Arc::new(FixedClock::new(t)),
        None => Arc::new(SystemClock),
    };
    Ok(AppState {
        hub: Arc::new(Hub::with_clock(engine, hub_config(cfg), clock)),
        admin_token: cfg.admin_token.clone(),
        web_dir: cfg.web_dir.clone(),
    })
}
