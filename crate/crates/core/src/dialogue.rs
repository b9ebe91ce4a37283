//! Dialogue state tracking and policy.
//!
//! A turn runs `classify -> fill_slots -> apply_policy -> execute`. The policy
//! picks exactly one of: the best matching [`Rule`], a step of the active
//! [`Form`], or the Core fallback. Every state change is recorded as an
//! [`Event`] on the session; the event log is append-only.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};
use uuid::Uuid;

use crate::gateway::ChannelDescriptor;
use crate::logstore::{Direction, LogRecord, LogStore};
use crate::nlu::{tokenize, NluModel, NluResult, OUT_OF_SCOPE};
use crate::profile::{
    parse_qr, personalize, record_consent, request_consent, Consent, MemoryWrite, ProfileError,
    ProfileStore, UserProfile, CONSENT_ALLOW, CONSENT_DENY, CONSENT_PROMPT, SLOT_POI_EXCLUDED,
    SLOT_PRIOR_INTERESTS, SLOT_USER_NAME,
};
use crate::response::{Response, ResponsePayload};
use crate::skills::{
    Bindings, RegistryError, SkillContext, SkillRegistry, TemplateCatalog, Trigger,
    APOLOGY_TEMPLATE, CORE_SKILL,
};

pub const DIALOGUE_SCHEMA_VERSION: u32 = 1;

/// Slot holding which yes/no question a skill is waiting on.
pub const AWAITING_SLOT: &str = "awaiting";

const MAX_ACTION_DEPTH: usize = 4;

pub type SessionId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SlotValue {
    Text(String),
    List(Vec<String>),
}

impl SlotValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            SlotValue::Text(t) => Some(t),
            SlotValue::List(_) => None,
        }
    }

    pub fn to_list(&self) -> Vec<String> {
        match self {
            SlotValue::Text(t) => vec![t.clone()],
            SlotValue::List(l) => l.clone(),
        }
    }
}

impl From<&str> for SlotValue {
    fn from(s: &str) -> Self {
        SlotValue::Text(s.to_string())
    }
}

impl From<Vec<String>> for SlotValue {
    fn from(v: Vec<String>) -> Self {
        SlotValue::List(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    UserUttered {
        nlu: NluResult,
    },
    BotUttered {
        response: Response,
    },
    SlotSet {
        name: String,
        value: Option<SlotValue>,
    },
    FormActivated {
        form: String,
    },
    FormDeactivated {
        form: String,
    },
    SkillInvoked {
        skill: String,
    },
    ActionFailed {
        action: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(flatten)]
    pub kind: EventKind,
    pub turn: u32,
    pub seq: u32,
    pub timestamp: DateTime<Utc>,
}

/// Consent bookkeeping for the current conversation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentState {
    pub requested: bool,
    pub answer: Option<Consent>,
    /// Recognition token held back until consent is granted.
    pub pending_token: Option<String>,
}

/// Per-conversation state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub channel: ChannelDescriptor,
    pub user_id: Option<String>,
    events: Vec<Event>,
    slots: BTreeMap<String, SlotValue>,
    active_form: Option<String>,
    turn_count: u32,
    next_seq: u32,
    pub consent: ConsentState,
    /// Set by the gateway when a rich display (e.g. a screen) shares the conversation.
    pub display_attached: bool,
}

impl Session {
    pub fn new(channel: ChannelDescriptor) -> Self {
        Self::with_id(Uuid::new_v4().to_string(), channel)
    }

    pub fn with_id(id: impl Into<String>, channel: ChannelDescriptor) -> Self {
        Self {
            id: id.into(),
            channel,
            user_id: None,
            events: Vec::new(),
            slots: BTreeMap::new(),
            active_form: None,
            turn_count: 0,
            next_seq: 0,
            consent: ConsentState::default(),
            display_attached: false,
        }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn slots(&self) -> &BTreeMap<String, SlotValue> {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotValue> {
        self.slots.get(name)
    }

    pub fn active_form(&self) -> Option<&str> {
        self.active_form.as_deref()
    }

    pub fn turn_count(&self) -> u32 {
        self.turn_count
    }

    /// Whether card payloads will be shown anywhere in this conversation.
    pub fn rich_display_available(&self) -> bool {
        self.channel.capabilities.rich_cards || self.display_attached
    }

    /// How often `template` was already used in this session.
    pub fn template_uses(&self, template: &str) -> usize {
        self.events
            .iter()
            .filter(|e| match &e.kind {
                EventKind::BotUttered { response } => {
                    response.template.as_deref() == Some(template)
                }
                _ => false,
            })
            .count()
    }

    pub fn bot_responses(&self) -> impl Iterator<Item = &Response> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::BotUttered { response } => Some(response),
            _ => None,
        })
    }

    /// Timestamps never go backwards within a session.
    pub fn clamp_time(&self, now: DateTime<Utc>) -> DateTime<Utc> {
        match self.events.last() {
            Some(last) if last.timestamp > now => last.timestamp,
            _ => now,
        }
    }

    pub(crate) fn push(&mut self, kind: EventKind, now: DateTime<Utc>) -> &Event {
        let now = self.clamp_time(now);
        match &kind {
            EventKind::SlotSet { name, value } => match value {
                Some(v) => {
                    self.slots.insert(name.clone(), v.clone());
                }
                None => {
                    self.slots.remove(name);
                }
            },
            EventKind::FormActivated { form } => self.active_form = Some(form.clone()),
            EventKind::FormDeactivated { .. } => self.active_form = None,
            _ => {}
        }
        let event = Event {
            kind,
            turn: self.turn_count,
            seq: self.next_seq,
            timestamp: now,
        };
        self.next_seq += 1;
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    fn begin_turn(&mut self) {
        self.turn_count += 1;
        self.next_seq = 0;
    }

    fn set_slot(&mut self, name: &str, value: Option<SlotValue>, now: DateTime<Utc>) {
        if self.slots.get(name) == value.as_ref() {
            return;
        }
        self.push(
            EventKind::SlotSet {
                name: name.to_string(),
                value,
            },
            now,
        );
    }
}

/// Clears slots and the active form. The event log and turn count are kept.
pub fn reset_session(mut session: Session) -> Session {
    session.slots.clear();
    session.active_form = None;
    session
}

/// Condition on the form state for a rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum FormCondition {
    #[default]
    Any,
    Inactive,
    Active,
    Named(String),
}

impl From<String> for FormCondition {
    fn from(s: String) -> Self {
        match s.as_str() {
            "any" => FormCondition::Any,
            "inactive" => FormCondition::Inactive,
            "active" => FormCondition::Active,
            _ => FormCondition::Named(s),
        }
    }
}

impl From<FormCondition> for String {
    fn from(c: FormCondition) -> Self {
        match c {
            FormCondition::Any => "any".into(),
            FormCondition::Inactive => "inactive".into(),
            FormCondition::Active => "active".into(),
            FormCondition::Named(n) => n,
        }
    }
}

impl FormCondition {
    fn holds(&self, active: Option<&str>) -> bool {
        match self {
            FormCondition::Any => true,
            FormCondition::Inactive => active.is_none(),
            FormCondition::Active => active.is_some(),
            FormCondition::Named(n) => active == Some(n.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotPredicate {
    pub slot: String,
    /// Slot must hold one of these text values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub one_of: Vec<String>,
    /// `Some(true)`: slot set; `Some(false)`: slot unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub present: Option<bool>,
}

impl SlotPredicate {
    fn holds(&self, slots: &BTreeMap<String, SlotValue>) -> bool {
        let value = slots.get(&self.slot);
        if let Some(p) = self.present {
            if value.is_some() != p {
                return false;
            }
        }
        if !self.one_of.is_empty() {
            return value
                .and_then(SlotValue::as_text)
                .is_some_and(|v| self.one_of.iter().any(|o| o == v));
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SayTemplate {
        template: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        bindings: Bindings,
    },
    InvokeSkill {
        skill: String,
    },
    SetSlot {
        name: String,
        value: Option<SlotValue>,
    },
    ActivateForm {
        form: String,
    },
    DeactivateForm,
}

impl Action {
    pub fn say(template: &str) -> Self {
        Action::SayTemplate {
            template: template.to_string(),
            bindings: Bindings::new(),
        }
    }

    pub fn invoke(skill: &str) -> Self {
        Action::InvokeSkill {
            skill: skill.to_string(),
        }
    }

    pub fn activate(form: &str) -> Self {
        Action::ActivateForm {
            form: form.to_string(),
        }
    }

    fn touches_form(&self) -> bool {
        matches!(self, Action::ActivateForm { .. } | Action::DeactivateForm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub when_intent: String,
    #[serde(default)]
    pub when_form: FormCondition,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub when_slots: Vec<SlotPredicate>,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub priority: i32,
}

impl Rule {
    fn matches(&self, session: &Session, nlu: &NluResult) -> bool {
        self.when_intent == nlu.intent
            && self.when_form.holds(session.active_form())
            && self.when_slots.iter().all(|p| p.holds(&session.slots))
    }
}

/// How an utterance can fill a form slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMapping {
    /// Fill from entities of this type (any required slot, any turn).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_entity: Option<String>,
    /// Fill with `value` when this intent answers the requested slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_intent: Option<String>,
    /// Fixed value instead of the entity's canonical value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<SlotValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intent: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub not_intent: Vec<String>,
}

impl SlotMapping {
    pub fn entity(entity_type: &str) -> Self {
        Self {
            from_entity: Some(entity_type.to_string()),
            from_intent: None,
            value: None,
            intent: Vec::new(),
            not_intent: Vec::new(),
        }
    }

    fn intent_allowed(&self, intent: &str) -> bool {
        (self.intent.is_empty() || self.intent.iter().any(|i| i == intent))
            && !self.not_intent.iter().any(|i| i == intent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredSlot {
    pub slot: String,
    /// Template asked while this slot is the requested one.
    pub prompt: String,
    pub mappings: Vec<SlotMapping>,
    /// List slots append in order of appearance instead of replacing.
    #[serde(default)]
    pub list: bool,
    /// Values added here are removed from this other list slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusive_with: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Form {
    pub name: String,
    /// Skill the form's prompts are attributed to.
    pub skill: String,
    pub required_slots: Vec<RequiredSlot>,
    pub on_complete: Action,
    /// Extra slots cleared whenever the form is (re)activated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reset_slots: Vec<String>,
}

impl Form {
    /// First required slot without a value.
    pub fn requested_slot<'a>(
        &'a self,
        slots: &BTreeMap<String, SlotValue>,
    ) -> Option<&'a RequiredSlot> {
        self.required_slots
            .iter()
            .find(|s| !slots.contains_key(&s.slot))
    }

    pub fn is_complete(&self, slots: &BTreeMap<String, SlotValue>) -> bool {
        self.requested_slot(slots).is_none()
    }
}

/// Boot configuration: templates, forms and rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialogueDocument {
    pub schema_version: u32,
    pub templates: TemplateCatalog,
    #[serde(default)]
    pub forms: Vec<Form>,
    pub rules: Vec<Rule>,
}

impl DialogueDocument {
    pub fn from_json(text: &str) -> Result<Self, BootError> {
        let doc: DialogueDocument =
            serde_json::from_str(text).map_err(|e| BootError::Parse(e.to_string()))?;
        if doc.schema_version != DIALOGUE_SCHEMA_VERSION {
            return Err(BootError::SchemaVersion(doc.schema_version));
        }
        Ok(doc)
    }

    /// Drops rules and forms that invoke `skill`, so the skill can be unregistered.
    pub fn without_skill(mut self, skill: &str) -> Self {
        let invokes = |a: &Action| matches!(a, Action::InvokeSkill { skill: s } if s == skill);
        let dropped_forms: HashSet<String> = self
            .forms
            .iter()
            .filter(|f| f.skill == skill || invokes(&f.on_complete))
            .map(|f| f.name.clone())
            .collect();
        self.forms.retain(|f| !dropped_forms.contains(&f.name));
        self.rules.retain(|r| {
            !r.actions.iter().any(|a| {
                invokes(a)
                    || matches!(a, Action::ActivateForm { form } if dropped_forms.contains(form))
            }) && !matches!(&r.when_form, FormCondition::Named(f) if dropped_forms.contains(f))
        });
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BootError {
    #[error("dialogue config parse error: {0}")]
    Parse(String),
    #[error("unsupported dialogue schema_version {0}")]
    SchemaVersion(u32),
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
    #[error("rule `{0}` has no actions")]
    EmptyRule(String),
    #[error("duplicate form `{0}`")]
    DuplicateForm(String),
    #[error("form `{0}` has no required slots")]
    EmptyForm(String),
    #[error("form `{form}` lists slot `{slot}` twice")]
    DuplicateFormSlot { form: String, slot: String },
    #[error("form `{form}` slot `{slot}` has an invalid mapping")]
    InvalidMapping { form: String, slot: String },
    #[error("`{owner}` references unknown template `{template}`")]
    UnknownTemplate { owner: String, template: String },
    #[error("`{owner}` references unknown skill `{skill}`")]
    UnknownSkill { owner: String, skill: String },
    #[error("`{owner}` references unknown form `{form}`")]
    UnknownForm { owner: String, form: String },
    #[error("`{owner}` references unknown intent `{intent}`")]
    UnknownIntent { owner: String, intent: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

/// Which branch of the policy fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fired {
    Rule(String),
    FormStep(String),
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDecision {
    pub fired: Fired,
    pub actions: Vec<Action>,
}

/// Immutable dialogue machinery shared by every session.
pub struct DialogueEngine {
    nlu: NluModel,
    rules: Vec<Rule>,
    forms: BTreeMap<String, Form>,
    templates: TemplateCatalog,
    skills: SkillRegistry,
    profiles: Arc<ProfileStore>,
    log: Arc<LogStore>,
}

impl std::fmt::Debug for DialogueEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DialogueEngine")
            .field("rules", &self.rules.len())
            .field("forms", &self.forms.keys().collect::<Vec<_>>())
            .field("skills", &self.skills)
            .finish()
    }
}

impl DialogueEngine {
    /// Validates every cross-reference eagerly; the first bad id fails boot.
    pub fn boot(
        nlu: NluModel,
        doc: DialogueDocument,
        skills: SkillRegistry,
        profiles: Arc<ProfileStore>,
        log: Arc<LogStore>,
    ) -> Result<Self, BootError> {
        doc.templates.validate()?;
        let intents: HashSet<&str> = nlu.intent_names().chain([OUT_OF_SCOPE]).collect();
        let templates = &doc.templates;
        let check_template = |owner: &str, t: &str| {
            if templates.contains(t) {
                Ok(())
            } else {
                Err(BootError::UnknownTemplate {
                    owner: owner.to_string(),
                    template: t.to_string(),
                })
            }
        };

        for skill in skills.skills() {
            let name = skill.descriptor().name;
            for t in skill.required_templates() {
                check_template(&name, t)?;
            }
        }
        check_template(CORE_SKILL, APOLOGY_TEMPLATE)?;
        for t in IDENTIFY_TEMPLATES {
            check_template(CORE_SKILL, t)?;
        }

        let mut forms = BTreeMap::new();
        for form in &doc.forms {
            if forms.contains_key(&form.name) {
                return Err(BootError::DuplicateForm(form.name.clone()));
            }
            if form.required_slots.is_empty() {
                return Err(BootError::EmptyForm(form.name.clone()));
            }
            let mut seen = HashSet::new();
            for slot in &form.required_slots {
                if !seen.insert(slot.slot.as_str()) {
                    return Err(BootError::DuplicateFormSlot {
                        form: form.name.clone(),
                        slot: slot.slot.clone(),
                    });
                }
                check_template(&form.name, &slot.prompt)?;
                for m in &slot.mappings {
                    let valid = match (&m.from_entity, &m.from_intent) {
                        (Some(_), None) => true,
                        (None, Some(i)) => m.value.is_some() && intents.contains(i.as_str()),
                        _ => false,
                    };
                    if !valid {
                        return Err(BootError::InvalidMapping {
                            form: form.name.clone(),
                            slot: slot.slot.clone(),
                        });
                    }
                }
            }
            if skills.get(&form.skill).is_none() {
                return Err(BootError::UnknownSkill {
                    owner: form.name.clone(),
                    skill: form.skill.clone(),
                });
            }
            forms.insert(form.name.clone(), form.clone());
        }

        let check_action = |owner: &str, a: &Action| -> Result<(), BootError> {
            match a {
                Action::SayTemplate { template, .. } => check_template(owner, template),
                Action::InvokeSkill { skill } if skills.get(skill).is_none() => {
                    Err(BootError::UnknownSkill {
                        owner: owner.to_string(),
                        skill: skill.clone(),
                    })
                }
                Action::ActivateForm { form } if !forms.contains_key(form) => {
                    Err(BootError::UnknownForm {
                        owner: owner.to_string(),
                        form: form.clone(),
                    })
                }
                _ => Ok(()),
            }
        };
        for form in forms.values() {
            check_action(&form.name, &form.on_complete)?;
        }

        let mut ids = HashSet::new();
        for rule in &doc.rules {
            if !ids.insert(rule.id.as_str()) {
                return Err(BootError::DuplicateRule(rule.id.clone()));
            }
            if rule.actions.is_empty() {
                return Err(BootError::EmptyRule(rule.id.clone()));
            }
            if !intents.contains(rule.when_intent.as_str()) {
                return Err(BootError::UnknownIntent {
                    owner: rule.id.clone(),
                    intent: rule.when_intent.clone(),
                });
            }
            if let FormCondition::Named(f) = &rule.when_form {
                if !forms.contains_key(f) {
                    return Err(BootError::UnknownForm {
                        owner: rule.id.clone(),
                        form: f.clone(),
                    });
                }
            }
            for a in &rule.actions {
                check_action(&rule.id, a)?;
            }
        }

        let mut rules = doc.rules.clone();
        // priority desc, id asc: the first matching rule is the winner
        rules.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)));

        Ok(Self {
            nlu,
            rules,
            forms,
            templates: doc.templates,
            skills,
            profiles,
            log,
        })
    }

    pub fn nlu(&self) -> &NluModel {
        &self.nlu
    }

    pub fn skills(&self) -> &SkillRegistry {
        &self.skills
    }

    pub fn templates(&self) -> &TemplateCatalog {
        &self.templates
    }

    pub fn profiles(&self) -> &Arc<ProfileStore> {
        &self.profiles
    }

    pub fn log(&self) -> &Arc<LogStore> {
        &self.log
    }

    pub fn form(&self, name: &str) -> Option<&Form> {
        self.forms.get(name)
    }

    pub fn new_session(&self, channel: ChannelDescriptor) -> Session {
        Session::new(channel)
    }

    /// Slot updates the utterance causes for the active form.
    ///
    /// Entity mappings apply to every required slot of the active form;
    /// intent mappings only answer the currently requested slot.
    pub fn fill_slots(&self, session: &Session, nlu: &NluResult) -> Vec<(String, SlotValue)> {
        let Some(form) = session.active_form().and_then(|f| self.forms.get(f)) else {
            return Vec::new();
        };
        let requested = form.requested_slot(session.slots()).map(|s| s.slot.clone());
        slot_updates_for(form, session.slots(), nlu, requested.as_deref())
    }

    /// Decides what fires for this turn. Pure in `(session, nlu)`.
    pub fn apply_policy(&self, session: &Session, nlu: &NluResult) -> PolicyDecision {
        let form = session.active_form().and_then(|f| self.forms.get(f));
        if let Some(rule) = self.rules.iter().find(|r| r.matches(session, nlu)) {
            let mut actions = rule.actions.clone();
            // a rule answering an off-form question hands control back to the form
            if let Some(form) = form {
                if !actions.iter().any(Action::touches_form) {
                    actions.extend(self.form_step(form, session.slots()));
                }
            }
            return PolicyDecision {
                fired: Fired::Rule(rule.id.clone()),
                actions,
            };
        }
        if let Some(form) = form {
            return PolicyDecision {
                fired: Fired::FormStep(form.name.clone()),
                actions: self.form_step(form, session.slots()),
            };
        }
        PolicyDecision {
            fired: Fired::Fallback,
            actions: vec![Action::invoke(CORE_SKILL)],
        }
    }

    fn form_step(&self, form: &Form, slots: &BTreeMap<String, SlotValue>) -> Vec<Action> {
        match form.requested_slot(slots) {
            Some(slot) => vec![Action::say(&slot.prompt)],
            None => vec![Action::DeactivateForm, form.on_complete.clone()],
        }
    }

    /// Runs one user turn and returns the bot responses in order.
    pub fn handle_message(
        &self,
        session: &mut Session,
        text: &str,
        now: DateTime<Utc>,
    ) -> Vec<Response> {
        let now = session.clamp_time(now);
        let nlu = self.nlu.classify(text);
        session.begin_turn();
        session.push(EventKind::UserUttered { nlu: nlu.clone() }, now);
        self.log_event(session, session.events.len() - 1);

        if let Some(decision) = spoken_consent(session, &nlu) {
            let first_new = session.events.len();
            if let Err(e) = self.handle_consent(session, decision, now) {
                warn!(session = %session.id, error = %e, "spoken consent rejected");
            }
            return self.collect_new_responses(session, first_new);
        }

        for (name, value) in self.fill_slots(session, &nlu) {
            session.set_slot(&name, Some(value), now);
        }
        let awaiting_before = session.slot(AWAITING_SLOT).cloned();
        let first_new = session.events.len();

        let decision = self.apply_policy(session, &nlu);
        debug!(session = %session.id, intent = %nlu.intent, fired = ?decision.fired, "policy");
        let (trigger, attribution) = match &decision.fired {
            Fired::Rule(id) => (
                Trigger::Rule(id.clone()),
                self.skills.owner(&nlu.intent).to_string(),
            ),
            Fired::FormStep(f) => (
                Trigger::FormCompleted(f.clone()),
                self.forms[f].skill.clone(),
            ),
            Fired::Fallback => (Trigger::Fallback, CORE_SKILL.to_string()),
        };
        self.execute(
            session,
            &nlu,
            &decision.actions,
            &trigger,
            &attribution,
            now,
            0,
        );

        // a yes/no question only stays open for the turn right after it was asked
        let awaiting_touched = session.events[first_new..]
            .iter()
            .any(|e| matches!(&e.kind, EventKind::SlotSet { name, .. } if name == AWAITING_SLOT));
        if awaiting_before.is_some() && !awaiting_touched {
            session.set_slot(AWAITING_SLOT, None, now);
        }

        let responses = self.collect_new_responses(session, first_new);
        if responses.is_empty() {
            // no dead air even if a skill produced nothing
            self.say(session, APOLOGY_TEMPLATE, &Bindings::new(), CORE_SKILL, now);
            return self.collect_new_responses(session, first_new);
        }
        responses
    }

    fn collect_new_responses(&self, session: &Session, from: usize) -> Vec<Response> {
        session.events[from..]
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::BotUttered { response } => Some(response.clone()),
                _ => None,
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn execute(
        &self,
        session: &mut Session,
        nlu: &NluResult,
        actions: &[Action],
        trigger: &Trigger,
        attribution: &str,
        now: DateTime<Utc>,
        depth: usize,
    ) {
        if depth > MAX_ACTION_DEPTH {
            warn!(session = %session.id, "action chain too deep, stopping");
            return;
        }
        let mut completed: Option<String> = None;
        for action in actions {
            match action {
                Action::SayTemplate { template, bindings } => {
                    self.say(session, template, bindings, attribution, now);
                }
                Action::SetSlot { name, value } => session.set_slot(name, value.clone(), now),
                Action::DeactivateForm => {
                    if let Some(form) = session.active_form.clone() {
                        if self
                            .forms
                            .get(&form)
                            .is_some_and(|f| f.is_complete(session.slots()))
                        {
                            completed = Some(form.clone());
                        }
                        session.push(EventKind::FormDeactivated { form }, now);
                    }
                }
                Action::ActivateForm { form } => self.activate_form(session, nlu, form, now, depth),
                Action::InvokeSkill { skill } => {
                    let trigger = match (&completed, trigger) {
                        (Some(form), _) => Trigger::FormCompleted(form.clone()),
                        (None, Trigger::FormCompleted(_)) => trigger.clone(),
                        _ if depth > 0 => Trigger::FollowUp,
                        _ => trigger.clone(),
                    };
                    self.invoke(session, nlu, skill, trigger, now, depth);
                }
            }
        }
    }

    fn activate_form(
        &self,
        session: &mut Session,
        nlu: &NluResult,
        name: &str,
        now: DateTime<Utc>,
        depth: usize,
    ) {
        let form = &self.forms[name];
        if let Some(current) = session.active_form.clone() {
            session.push(EventKind::FormDeactivated { form: current }, now);
        }
        for slot in form
            .required_slots
            .iter()
            .map(|s| s.slot.as_str())
            .chain(form.reset_slots.iter().map(String::as_str))
        {
            session.set_slot(slot, None, now);
        }
        session.push(
            EventKind::FormActivated {
                form: name.to_string(),
            },
            now,
        );
        for (slot, value) in slot_updates_for(form, session.slots(), nlu, None) {
            session.set_slot(&slot, Some(value), now);
        }
        match form.requested_slot(session.slots()) {
            Some(slot) => {
                let prompt = slot.prompt.clone();
                self.say(session, &prompt, &Bindings::new(), &form.skill, now);
            }
            None => {
                session.push(
                    EventKind::FormDeactivated {
                        form: name.to_string(),
                    },
                    now,
                );
                let trigger = Trigger::FormCompleted(name.to_string());
                let on_complete = [form.on_complete.clone()];
                self.execute(
                    session,
                    nlu,
                    &on_complete,
                    &trigger,
                    &form.skill,
                    now,
                    depth + 1,
                );
            }
        }
    }

    fn invoke(
        &self,
        session: &mut Session,
        nlu: &NluResult,
        name: &str,
        trigger: Trigger,
        now: DateTime<Utc>,
        depth: usize,
    ) {
        let Some(skill) = self.skills.get(name).cloned() else {
            self.fail(
                session,
                &format!("invoke_skill:{name}"),
                "unknown skill",
                now,
            );
            return;
        };
        session.push(
            EventKind::SkillInvoked {
                skill: name.to_string(),
            },
            now,
        );
        let profile = self.consented_profile(session);
        let output = {
            let mut ctx = SkillContext::new(
                session,
                nlu,
                trigger,
                now,
                profile.as_ref(),
                name,
                &self.templates,
            );
            match skill.handle(&mut ctx) {
                Ok(()) => Ok(ctx.finish()),
                Err(e) => Err(e),
            }
        };
        match output {
            Ok(out) => {
                for (slot, value) in out.slot_updates {
                    session.set_slot(&slot, value, now);
                }
                for response in out.responses {
                    self.emit(session, response, now);
                }
                if let Some(user) = session.user_id.clone() {
                    for write in out.memory {
                        if let Err(e) = self.profiles.remember(&user, write, now) {
                            debug!(user, error = %e, "memory write skipped");
                        }
                    }
                }
                if !out.follow_up.is_empty() {
                    self.execute(
                        session,
                        nlu,
                        &out.follow_up,
                        &Trigger::FollowUp,
                        name,
                        now,
                        depth + 1,
                    );
                }
            }
            Err(e) => {
                warn!(session = %session.id, skill = name, error = %e, "skill failed");
                self.fail(
                    session,
                    &format!("invoke_skill:{name}"),
                    &e.to_string(),
                    now,
                );
            }
        }
    }

    fn consented_profile(&self, session: &Session) -> Option<UserProfile> {
        let user = session.user_id.as_deref()?;
        self.profiles
            .get(user)
            .filter(|p| p.consent == Consent::Granted)
    }

    fn fail(&self, session: &mut Session, action: &str, message: &str, now: DateTime<Utc>) {
        session.push(
            EventKind::ActionFailed {
                action: action.to_string(),
                message: message.to_string(),
            },
            now,
        );
        self.say(session, APOLOGY_TEMPLATE, &Bindings::new(), CORE_SKILL, now);
    }

    /// Renders a template with per-session variant cycling and emits it.
    pub(crate) fn say(
        &self,
        session: &mut Session,
        template: &str,
        bindings: &Bindings,
        skill: &str,
        now: DateTime<Utc>,
    ) {
        let uses = session.template_uses(template);
        match self.templates.render(template, uses, bindings) {
            Ok(payload) => self.emit(
                session,
                Response {
                    payload,
                    template: Some(template.to_string()),
                    skill: skill.to_string(),
                },
                now,
            ),
            Err(e) if template != APOLOGY_TEMPLATE => self.fail(
                session,
                &format!("say_template:{template}"),
                &e.to_string(),
                now,
            ),
            Err(e) => {
                warn!(error = %e, "apology template unusable");
                self.emit(
                    session,
                    Response::new(
                        ResponsePayload::text("Sorry, something went wrong."),
                        CORE_SKILL,
                    ),
                    now,
                );
            }
        }
    }

    pub(crate) fn emit(&self, session: &mut Session, response: Response, now: DateTime<Utc>) {
        session.push(EventKind::BotUttered { response }, now);
        self.log_event(session, session.events.len() - 1);
    }

    fn log_event(&self, session: &Session, index: usize) {
        let event = &session.events[index];
        let (direction, text, intent, skill) = match &event.kind {
            EventKind::UserUttered { nlu: n } => (
                Direction::User,
                n.text.clone(),
                Some(n.intent.clone()),
                None,
            ),
            EventKind::BotUttered { response } => (
                Direction::Bot,
                crate::gateway::flatten_text(&response.payload),
                session.events[..index]
                    .iter()
                    .rev()
                    .find_map(|e| match &e.kind {
                        EventKind::UserUttered { nlu } => Some(nlu.intent.clone()),
                        _ => None,
                    }),
                Some(response.skill.clone()),
            ),
            _ => return,
        };
        let user_id = session
            .user_id
            .as_ref()
            .filter(|u| {
                self.profiles
                    .get(u)
                    .is_some_and(|p| p.consent == Consent::Granted)
            })
            .cloned();
        let record = LogRecord {
            session_id: session.id.clone(),
            turn: event.turn,
            seq: event.seq,
            timestamp: event.timestamp,
            direction,
            text,
            intent,
            skill,
            channel_kind: session.channel.channel_kind,
            user_id,
        };
        if let Err(e) = self.log.append(record) {
            warn!(session = %session.id, error = %e, "conversation log append failed");
        }
    }
}

/// Identification and consent, driven by gateway messages rather than utterances.
impl DialogueEngine {
    /// Handles a badge scan or recognition event. `None` means the user asked
    /// to be identified without presenting a token.
    pub fn handle_identify(
        &self,
        session: &mut Session,
        token: Option<&str>,
        now: DateTime<Utc>,
    ) -> Vec<Response> {
        let first = session.events.len();
        let now = session.clamp_time(now);
        match token {
            None => self.ask_consent_or(session, "utter_scan_badge", now),
            Some(t) => match self.profiles.identify(t) {
                Some(profile) => {
                    session.user_id = Some(profile.user_id.clone());
                    let mut consent = profile.consent;
                    if let Some(answer) = session.consent.answer {
                        if answer != consent {
                            match self.profiles.set_consent(&profile.user_id, answer) {
                                Ok(_) => consent = answer,
                                Err(e) => warn!(error = %e, "applying session consent failed"),
                            }
                        }
                    }
                    match consent {
                        Consent::Granted => self.welcome(session, now),
                        Consent::Denied => self.say(
                            session,
                            "utter_identified_private",
                            &Bindings::new(),
                            CORE_SKILL,
                            now,
                        ),
                        Consent::Unknown => {
                            self.ask_consent_or(session, "utter_identified_private", now)
                        }
                    }
                }
                None if parse_qr(t).is_some() => self.say(
                    session,
                    "utter_unknown_badge",
                    &Bindings::new(),
                    CORE_SKILL,
                    now,
                ),
                None => {
                    // an unlinked recognition token; only kept if consent may still be granted
                    if session.consent.answer == Some(Consent::Denied) {
                        return Vec::new();
                    }
                    if let Some(user) = self.consented_profile(session).map(|p| p.user_id) {
                        if let Err(e) = self.profiles.link(&user, t) {
                            warn!(error = %e, "linking recognition token failed");
                        }
                        return Vec::new();
                    }
                    session.consent.pending_token = Some(t.to_string());
                    if let Some(r) = request_consent(session) {
                        self.emit(session, r, now);
                    }
                    self.emit(
                        session,
                        Response::new(
                            ResponsePayload::IdentifyRequest {
                                reason: "Please scan your badge so I can recognize you.".into(),
                            },
                            CORE_SKILL,
                        ),
                        now,
                    );
                }
            },
        }
        self.collect_new_responses(session, first)
    }

    /// Applies the user's answer to the consent request of this session.
    pub fn handle_consent(
        &self,
        session: &mut Session,
        decision: Consent,
        now: DateTime<Utc>,
    ) -> Result<Vec<Response>, ProfileError> {
        let first = session.events.len();
        let now = session.clamp_time(now);
        let profile = record_consent(&self.profiles, session, decision)?;
        match (decision, profile) {
            (Consent::Granted, Some(_)) => self.welcome(session, now),
            (Consent::Granted, None) => self.say(
                session,
                "utter_consent_granted",
                &Bindings::new(),
                CORE_SKILL,
                now,
            ),
            _ => {
                for slot in [SLOT_USER_NAME, SLOT_PRIOR_INTERESTS, SLOT_POI_EXCLUDED] {
                    session.set_slot(slot, None, now);
                }
                session.user_id = None;
                self.say(
                    session,
                    "utter_consent_denied",
                    &Bindings::new(),
                    CORE_SKILL,
                    now,
                );
            }
        }
        Ok(self.collect_new_responses(session, first))
    }

    fn ask_consent_or(&self, session: &mut Session, otherwise: &str, now: DateTime<Utc>) {
        match request_consent(session) {
            Some(r) => self.emit(session, r, now),
            None => self.say(session, otherwise, &Bindings::new(), CORE_SKILL, now),
        }
    }

    fn welcome(&self, session: &mut Session, now: DateTime<Utc>) {
        let Some(profile) = self.consented_profile(session) else {
            return;
        };
        if let Some(token) = session.consent.pending_token.take() {
            if let Err(e) = self.profiles.link(&profile.user_id, &token) {
                warn!(error = %e, "linking recognition token failed");
            }
        }
        if let Err(e) = self
            .profiles
            .remember(&profile.user_id, MemoryWrite::Seen, now)
        {
            debug!(error = %e, "last-seen update skipped");
        }
        for (slot, value) in personalize(&profile).slots() {
            session.set_slot(slot, Some(value), now);
        }
        let returning = profile.memory.last_seen.is_some();
        match &profile.display_name {
            Some(name) => self.say(
                session,
                if returning {
                    "utter_welcome_back"
                } else {
                    "utter_welcome"
                },
                &crate::skills::bindings([("name", name.clone())]),
                CORE_SKILL,
                now,
            ),
            None => self.say(
                session,
                if returning {
                    "utter_welcome_back_anon"
                } else {
                    "utter_welcome_anon"
                },
                &Bindings::new(),
                CORE_SKILL,
                now,
            ),
        }
    }
}

/// A yes/no (or Allow/Deny) reply to a consent question asked since the previous user turn.
fn spoken_consent(session: &Session, nlu: &NluResult) -> Option<Consent> {
    if !session.consent.requested || session.consent.answer.is_some() {
        return None;
    }
    // events since the previous user utterance, skipping the one just recorded
    let asked = session
        .events
        .iter()
        .rev()
        .skip(1)
        .take_while(|e| !matches!(e.kind, EventKind::UserUttered { .. }))
        .any(|e| matches!(&e.kind, EventKind::BotUttered { response } if response.template.as_deref() == Some(CONSENT_PROMPT)));
    if !asked {
        return None;
    }
    let tokens = tokenize(&nlu.text);
    if tokens == tokenize(CONSENT_ALLOW) || nlu.intent == "affirm" {
        Some(Consent::Granted)
    } else if tokens == tokenize(CONSENT_DENY) || nlu.intent == "deny" {
        Some(Consent::Denied)
    } else {
        None
    }
}

/// Templates the identification flow renders.
pub const IDENTIFY_TEMPLATES: [&str; 9] = [
    "utter_scan_badge",
    "utter_identified_private",
    "utter_unknown_badge",
    "utter_consent_granted",
    "utter_consent_denied",
    "utter_welcome",
    "utter_welcome_anon",
    "utter_welcome_back",
    "utter_welcome_back_anon",
];

fn slot_updates_for(
    form: &Form,
    slots: &BTreeMap<String, SlotValue>,
    nlu: &NluResult,
    requested: Option<&str>,
) -> Vec<(String, SlotValue)> {
    let mut working: BTreeMap<String, SlotValue> = BTreeMap::new();
    let current = |working: &BTreeMap<String, SlotValue>, name: &str| -> Option<SlotValue> {
        working.get(name).or_else(|| slots.get(name)).cloned()
    };
    let mut order: Vec<String> = Vec::new();
    let touch = |order: &mut Vec<String>, name: &str| {
        if !order.iter().any(|n| n == name) {
            order.push(name.to_string());
        }
    };

    for slot in &form.required_slots {
        for mapping in &slot.mappings {
            if !mapping.intent_allowed(&nlu.intent) {
                continue;
            }
            let values: Vec<String> = if let Some(entity_type) = &mapping.from_entity {
                let found: Vec<String> = nlu
                    .entities_of(entity_type)
                    .map(|e| e.value.clone())
                    .collect();
                if found.is_empty() {
                    continue;
                }
                match &mapping.value {
                    Some(fixed) => fixed.to_list(),
                    None => found,
                }
            } else if mapping.from_intent.as_deref() == Some(nlu.intent.as_str())
                && requested == Some(slot.slot.as_str())
            {
                mapping
                    .value
                    .as_ref()
                    .map(SlotValue::to_list)
                    .unwrap_or_default()
            } else {
                continue;
            };

            if slot.list {
                let mut list = current(&working, &slot.slot)
                    .map(|v| v.to_list())
                    .unwrap_or_default();
                for v in &values {
                    if !list.contains(v) {
                        list.push(v.clone());
                    }
                }
                working.insert(slot.slot.clone(), SlotValue::List(list));
                touch(&mut order, &slot.slot);
                if let Some(other) = &slot.exclusive_with {
                    if let Some(existing) = current(&working, other) {
                        let pruned: Vec<String> = existing
                            .to_list()
                            .into_iter()
                            .filter(|v| !values.contains(v))
                            .collect();
                        working.insert(other.clone(), SlotValue::List(pruned));
                        touch(&mut order, other);
                    }
                }
            } else if working.contains_key(&slot.slot) {
                continue;
            } else if let Some(first) = values.into_iter().next() {
                working.insert(slot.slot.clone(), SlotValue::Text(first));
                touch(&mut order, &slot.slot);
            }
        }
    }

    order
        .into_iter()
        .filter_map(|name| {
            let v = working.remove(&name)?;
            (slots.get(&name) != Some(&v)).then_some((name, v))
        })
        .collect()
}

/// Intents the rules and forms reference, for corpus coverage checks.
pub fn referenced_intents(doc: &DialogueDocument) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = doc.rules.iter().map(|r| r.when_intent.clone()).collect();
    for f in &doc.forms {
        for s in &f.required_slots {
            for m in &s.mappings {
                out.extend(m.from_intent.iter().cloned());
                out.extend(m.intent.iter().cloned());
                out.extend(m.not_intent.iter().cloned());
            }
        }
    }
    out
}
