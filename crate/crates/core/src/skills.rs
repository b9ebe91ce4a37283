//! Skill abstraction, registry, template catalog and the Core chit-chat skill.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dialogue::{Action, Session, SlotValue};
use crate::nlu::{NluResult, OUT_OF_SCOPE};
use crate::profile::{MemoryWrite, UserProfile};
use crate::response::{Response, ResponsePayload};

pub const CORE_SKILL: &str = "core";
pub const APOLOGY_TEMPLATE: &str = "utter_apology";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("unknown template `{0}`")]
    Unknown(String),
    #[error("template `{template}` needs binding `{name}`")]
    MissingBinding { template: String, name: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("skill `{0}` is already registered")]
    DuplicateSkill(String),
    #[error("intent `{intent}` is claimed by both `{first}` and `{second}`")]
    IntentClaimedTwice {
        intent: String,
        first: String,
        second: String,
    },
    #[error("template catalog has an empty template id")]
    EmptyTemplateId,
    #[error("template `{0}` has no variants")]
    NoVariants(String),
}

/// One way of phrasing a template.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TemplateVariant {
    pub text: String,
    /// When non-empty the variant renders as quick replies with `text` as prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quick_replies: Vec<String>,
}

/// Template id to ordered variants.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(transparent)]
pub struct TemplateCatalog {
    templates: BTreeMap<String, Vec<TemplateVariant>>,
}

pub type Bindings = BTreeMap<String, String>;

/// Shorthand for building template bindings.
pub fn bindings<const N: usize>(pairs: [(&str, String); N]) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

impl TemplateCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, variants: Vec<TemplateVariant>) {
        self.templates.insert(id.into(), variants);
    }

    pub fn with_text(mut self, id: &str, texts: &[&str]) -> Self {
        self.insert(
            id,
            texts
                .iter()
                .map(|t| TemplateVariant {
                    text: (*t).to_string(),
                    quick_replies: Vec::new(),
                })
                .collect(),
        );
        self
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        for (id, variants) in &self.templates {
            if id.trim().is_empty() {
                return Err(RegistryError::EmptyTemplateId);
            }
            if variants.is_empty() {
                return Err(RegistryError::NoVariants(id.clone()));
            }
        }
        Ok(())
    }

    /// Renders the variant at `prior_uses % variant_count`.
    pub fn render(
        &self,
        id: &str,
        prior_uses: usize,
        bindings: &Bindings,
    ) -> Result<ResponsePayload, TemplateError> {
        let variants = self
            .templates
            .get(id)
            .ok_or_else(|| TemplateError::Unknown(id.to_string()))?;
        let variant = &variants[prior_uses % variants.len()];
        let text = fill_placeholders(id, &variant.text, bindings)?;
        if variant.quick_replies.is_empty() {
            Ok(ResponsePayload::Text { text })
        } else {
            let options = variant
                .quick_replies
                .iter()
                .map(|o| fill_placeholders(id, o, bindings))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ResponsePayload::QuickReplies {
                prompt: text,
                options,
            })
        }
    }
}

fn fill_placeholders(id: &str, text: &str, bindings: &Bindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                let value = bindings
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingBinding {
                        template: id.to_string(),
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Why a skill is being run this turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    Rule(String),
    FormCompleted(String),
    Fallback,
    FollowUp,
}

/// What a skill sees and produces during one invocation.
pub struct SkillContext<'a> {
    pub session: &'a Session,
    pub nlu: &'a NluResult,
    pub trigger: Trigger,
    pub now: DateTime<Utc>,
    /// Bound profile; only present when the user granted consent.
    pub profile: Option<&'a UserProfile>,
    skill: &'a str,
    templates: &'a TemplateCatalog,
    responses: Vec<Response>,
    slot_updates: Vec<(String, Option<SlotValue>)>,
    follow_up: Vec<Action>,
    memory: Vec<MemoryWrite>,
}

/// Collected effects of one skill invocation.
#[derive(Debug, Default)]
pub struct SkillOutput {
    pub responses: Vec<Response>,
    pub slot_updates: Vec<(String, Option<SlotValue>)>,
    pub follow_up: Vec<Action>,
    pub memory: Vec<MemoryWrite>,
}

impl<'a> SkillContext<'a> {
    pub fn new(
        session: &'a Session,
        nlu: &'a NluResult,
        trigger: Trigger,
        now: DateTime<Utc>,
        profile: Option<&'a UserProfile>,
        skill: &'a str,
        templates: &'a TemplateCatalog,
    ) -> Self {
        Self {
            session,
            nlu,
            trigger,
            now,
            profile,
            skill,
            templates,
            responses: Vec::new(),
            slot_updates: Vec::new(),
            follow_up: Vec::new(),
            memory: Vec::new(),
        }
    }

    /// Intent the skill should act on; fallback turns always act as out-of-scope.
    pub fn intent(&self) -> &str {
        if self.trigger == Trigger::Fallback {
            OUT_OF_SCOPE
        } else {
            &self.nlu.intent
        }
    }

    /// Current slot value including updates made earlier in this invocation.
    pub fn slot(&self, name: &str) -> Option<&SlotValue> {
        if let Some((_, v)) = self.slot_updates.iter().rev().find(|(n, _)| n == name) {
            return v.as_ref();
        }
        self.session.slot(name)
    }

    pub fn slot_text(&self, name: &str) -> Option<&str> {
        self.slot(name).and_then(SlotValue::as_text)
    }

    pub fn slot_list(&self, name: &str) -> Vec<String> {
        self.slot(name).map(SlotValue::to_list).unwrap_or_default()
    }

    pub fn set_slot(&mut self, name: &str, value: SlotValue) {
        self.slot_updates.push((name.to_string(), Some(value)));
    }

    pub fn clear_slot(&mut self, name: &str) {
        if self.slot(name).is_some() {
            self.slot_updates.push((name.to_string(), None));
        }
    }

    pub fn say(&mut self, template: &str, bindings: &Bindings) -> Result<(), SkillError> {
        let uses = self.session.template_uses(template)
            + self
                .responses
                .iter()
                .filter(|r| r.template.as_deref() == Some(template))
                .count();
        let payload = self.templates.render(template, uses, bindings)?;
        self.responses.push(Response {
            payload,
            template: Some(template.to_string()),
            skill: self.skill.to_string(),
        });
        Ok(())
    }

    pub fn push(&mut self, payload: ResponsePayload) {
        self.responses.push(Response::new(payload, self.skill));
    }

    pub fn then(&mut self, action: Action) {
        self.follow_up.push(action);
    }

    pub fn remember(&mut self, write: MemoryWrite) {
        self.memory.push(write);
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn finish(self) -> SkillOutput {
        SkillOutput {
            responses: self.responses,
            slot_updates: self.slot_updates,
            follow_up: self.follow_up,
            memory: self.memory,
        }
    }
}

/// Name and intents a skill owns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillDescriptor {
    pub name: String,
    pub claimed_intents: BTreeSet<String>,
}

impl SkillDescriptor {
    pub fn new<I, S>(name: impl Into<String>, intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            claimed_intents: intents.into_iter().map(Into::into).collect(),
        }
    }
}

pub trait Skill: Send + Sync {
    fn descriptor(&self) -> SkillDescriptor;

    fn handle(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError>;

    /// Template ids this skill renders; checked against the catalog at boot.
    fn required_templates(&self) -> Vec<&'static str> {
        Vec::new()
    }

    /// Entity vocabularies derived from the skill's data (speakers, rooms...).
    fn gazetteers(&self) -> Vec<crate::nlu::Gazetteer> {
        Vec::new()
    }
}

/// Result of routing an intent.
pub struct Route<'a> {
    pub skill: &'a Arc<dyn Skill>,
    pub is_fallback: bool,
}

impl Route<'_> {
    pub fn name(&self) -> String {
        self.skill.descriptor().name
    }
}

/// Registered skills and the intent routing table. Core is always present.
#[derive(Clone)]
pub struct SkillRegistry {
    skills: BTreeMap<String, Arc<dyn Skill>>,
    routes: HashMap<String, String>,
}

impl std::fmt::Debug for SkillRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkillRegistry")
            .field("skills", &self.skills.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl SkillRegistry {
    pub fn new(core: Arc<dyn Skill>) -> Result<Self, RegistryError> {
        let mut reg = Self {
            skills: BTreeMap::new(),
            routes: HashMap::new(),
        };
        reg.register(core)?;
        Ok(reg)
    }

    pub fn register(&mut self, skill: Arc<dyn Skill>) -> Result<(), RegistryError> {
        let desc = skill.descriptor();
        if self.skills.contains_key(&desc.name) {
            return Err(RegistryError::DuplicateSkill(desc.name));
        }
        for intent in &desc.claimed_intents {
            if let Some(owner) = self.routes.get(intent) {
                return Err(RegistryError::IntentClaimedTwice {
                    intent: intent.clone(),
                    first: owner.clone(),
                    second: desc.name.clone(),
                });
            }
        }
        for intent in &desc.claimed_intents {
            self.routes.insert(intent.clone(), desc.name.clone());
        }
        self.skills.insert(desc.name, skill);
        Ok(())
    }

    /// Removes a skill; its intents fall back to Core. Core itself stays.
    pub fn unregister(&mut self, name: &str) -> bool {
        if name == CORE_SKILL {
            return false;
        }
        let removed = self.skills.remove(name).is_some();
        self.routes.retain(|_, owner| owner != name);
        removed
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Skill>> {
        self.skills.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.skills.keys().map(String::as_str)
    }

    pub fn skills(&self) -> impl Iterator<Item = &Arc<dyn Skill>> {
        self.skills.values()
    }

    pub fn core(&self) -> &Arc<dyn Skill> {
        &self.skills[CORE_SKILL]
    }

    pub fn route(&self, intent: &str) -> Route<'_> {
        if let Some(skill) = self.routes.get(intent).and_then(|n| self.skills.get(n)) {
            return Route {
                skill,
                is_fallback: false,
            };
        }
        if intent != OUT_OF_SCOPE {
            warn!(intent, "no skill claims intent, routing to core fallback");
        }
        Route {
            skill: self.core(),
            is_fallback: true,
        }
    }

    /// Name of the skill owning `intent`, or Core.
    pub fn owner(&self, intent: &str) -> &str {
        self.routes
            .get(intent)
            .filter(|n| self.skills.contains_key(*n))
            .map(String::as_str)
            .unwrap_or(CORE_SKILL)
    }
}

/// Chit-chat: greetings, FAQ templates and out-of-scope handling.
#[derive(Debug, Clone)]
pub struct CoreSkill {
    intent_templates: BTreeMap<String, String>,
}

impl Default for CoreSkill {
    fn default() -> Self {
        let pairs = [
            ("greet", "utter_greet"),
            ("goodbye", "utter_goodbye"),
            ("thanks", "utter_thanks"),
            ("who_are_you", "utter_who_are_you"),
            ("ask_weather", "utter_weather"),
            ("help", "utter_help"),
            ("affirm", "utter_affirm"),
            ("deny", "utter_deny"),
            ("stop", "utter_stop"),
        ];
        Self {
            intent_templates: pairs
                .iter()
                .map(|(i, t)| (i.to_string(), t.to_string()))
                .collect(),
        }
    }
}

impl CoreSkill {
    pub fn with_intents(intent_templates: BTreeMap<String, String>) -> Self {
        Self { intent_templates }
    }

    pub fn template_for(&self, intent: &str) -> Option<&str> {
        self.intent_templates.get(intent).map(String::as_str)
    }
}

impl Skill for CoreSkill {
    fn descriptor(&self) -> SkillDescriptor {
        SkillDescriptor::new(CORE_SKILL, self.intent_templates.keys().cloned())
    }

    fn required_templates(&self) -> Vec<&'static str> {
        vec![APOLOGY_TEMPLATE, "utter_out_of_scope", "utter_greet_named"]
    }

    fn handle(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        let intent = ctx.intent().to_string();
        if intent == "greet" {
            if let Some(name) = ctx.profile.and_then(|p| p.display_name.clone()) {
                return ctx.say("utter_greet_named", &bindings([("name", name)]));
            }
        }
        let template = if intent == OUT_OF_SCOPE {
            "utter_out_of_scope"
        } else {
            self.template_for(&intent).unwrap_or(APOLOGY_TEMPLATE)
        };
        match ctx.say(template, &Bindings::new()) {
            Err(SkillError::Template(TemplateError::Unknown(_))) => {
                ctx.say(APOLOGY_TEMPLATE, &Bindings::new())
            }
            other => other,
        }
    }
}
