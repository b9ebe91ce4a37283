//! Conference programme queries and interest-based session recommendation.

use std::collections::{BTreeSet, HashSet};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Action, SlotValue, AWAITING_SLOT};
use crate::nlu::{tokenize, Gazetteer, NluResult};
use crate::profile::{MemoryWrite, SLOT_PRIOR_INTERESTS};
use crate::response::ResponsePayload;
use crate::skills::{
    bindings, Bindings, Skill, SkillContext, SkillDescriptor, SkillError, Trigger,
};

pub const CONFERENCE_SKILL: &str = "conference";
pub const INTEREST_FORM: &str = "interest_form";
pub const PROGRAMME_SCHEMA_VERSION: u32 = 1;

pub const SLOT_INTERESTS: &str = "interests";
pub const SLOT_RECOMMENDED: &str = "conf_recommended";
pub const SLOT_CURRENT: &str = "conf_current";

const AWAIT_OFFER: &str = "session_offer";
const AWAIT_CONFIRM: &str = "confirm_interests";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Keynote,
    Tutorial,
    Workshop,
    Session,
    Social,
}

impl EventCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            EventCategory::Keynote => "keynote",
            EventCategory::Tutorial => "tutorial",
            EventCategory::Workshop => "workshop",
            EventCategory::Session => "session",
            EventCategory::Social => "social",
        }
    }

    pub fn recommendable(self) -> bool {
        matches!(
            self,
            EventCategory::Session | EventCategory::Tutorial | EventCategory::Workshop
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConferenceEvent {
    pub id: String,
    pub title: String,
    pub kind: EventCategory,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub room: String,
    #[serde(default)]
    pub speakers: Vec<String>,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    #[serde(default)]
    pub topics: BTreeSet<String>,
}

impl ConferenceEvent {
    /// First sentence of the abstract.
    pub fn summary(&self) -> &str {
        let a = self.abstract_text.trim();
        match a.find(". ") {
            Some(i) => &a[..=i],
            None => a,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgrammeError {
    #[error("programme parse error: {0}")]
    Parse(String),
    #[error("unsupported programme schema_version {0}")]
    SchemaVersion(u32),
    #[error("programme has no events")]
    Empty,
    #[error("event `{0}` does not end after it starts")]
    EndBeforeStart(String),
    #[error("duplicate event id `{0}`")]
    DuplicateId(String),
    #[error("event `{item}`: invalid {field}: {reason}")]
    Invalid {
        item: String,
        field: &'static str,
        reason: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProgrammeDocument {
    pub schema_version: u32,
    pub events: Vec<ConferenceEvent>,
}

/// Validated programme sorted by (start, id). Topics include title and abstract tokens.
#[derive(Debug, Clone)]
pub struct Programme {
    events: Vec<ConferenceEvent>,
}

pub fn load_programme(json: &str) -> Result<Programme, ProgrammeError> {
    let doc: ProgrammeDocument =
        serde_json::from_str(json).map_err(|e| ProgrammeError::Parse(e.to_string()))?;
    if doc.schema_version != PROGRAMME_SCHEMA_VERSION {
        return Err(ProgrammeError::SchemaVersion(doc.schema_version));
    }
    Programme::new(doc.events)
}

impl Programme {
    pub fn new(mut events: Vec<ConferenceEvent>) -> Result<Self, ProgrammeError> {
        if events.is_empty() {
            return Err(ProgrammeError::Empty);
        }
        let mut ids = HashSet::new();
        for e in &mut events {
            if e.id.trim().is_empty() {
                return Err(ProgrammeError::Invalid {
                    item: e.id.clone(),
                    field: "id",
                    reason: "empty".into(),
                });
            }
            if !ids.insert(e.id.clone()) {
                return Err(ProgrammeError::DuplicateId(e.id.clone()));
            }
            if e.start >= e.end {
                return Err(ProgrammeError::EndBeforeStart(e.id.clone()));
            }
            if let Some(t) = e
                .topics
                .iter()
                .find(|t| t.is_empty() || t.to_lowercase() != **t)
            {
                return Err(ProgrammeError::Invalid {
                    item: e.id.clone(),
                    field: "topics",
                    reason: format!("{t:?} must be non-empty lowercase"),
                });
            }
            let extra: Vec<String> = tokenize(&e.title)
                .into_iter()
                .chain(tokenize(&e.abstract_text))
                .collect();
            e.topics.extend(extra);
        }
        events.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { events })
    }

    pub fn events(&self) -> &[ConferenceEvent] {
        &self.events
    }

    pub fn get(&self, id: &str) -> Option<&ConferenceEvent> {
        self.events.iter().find(|e| e.id == id)
    }

    /// Calendar date of the first event.
    pub fn first_day(&self) -> NaiveDate {
        self.events[0].start.date_naive()
    }

    pub fn rooms(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.room.as_str()).collect()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.events
            .iter()
            .flat_map(|e| e.speakers.iter().map(String::as_str))
            .collect()
    }

    /// Topic keywords declared in the programme (before token expansion they
    /// are a subset of every event's topics).
    pub fn topics(&self) -> BTreeSet<&str> {
        self.events
            .iter()
            .flat_map(|e| e.topics.iter().map(String::as_str))
            .collect()
    }
}

/// Elicited interests plus what was already suggested.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterestProfile {
    pub interests: Vec<String>,
    pub recommended_ids: BTreeSet<String>,
}

impl InterestProfile {
    pub fn new<I, S>(interests: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut p = Self::default();
        for i in interests {
            p.add_interest(&i.into());
        }
        p
    }

    pub fn add_interest(&mut self, interest: &str) {
        let i = interest.to_lowercase();
        if !self.interests.contains(&i) {
            self.interests.push(i);
        }
    }
}

/// |a ∩ b| / |a ∪ b|; 0 when both are empty.
pub fn jaccard<'a>(
    a: impl IntoIterator<Item = &'a str>,
    b: impl IntoIterator<Item = &'a str>,
) -> f64 {
    let a: HashSet<&str> = a.into_iter().collect();
    let b: HashSet<&str> = b.into_iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

pub fn interest_score(event: &ConferenceEvent, profile: &InterestProfile) -> f64 {
    jaccard(
        event.topics.iter().map(String::as_str),
        profile.interests.iter().map(String::as_str),
    )
}

/// All keynotes in start order.
pub fn keynotes(programme: &Programme) -> Vec<&ConferenceEvent> {
    programme
        .events
        .iter()
        .filter(|e| e.kind == EventCategory::Keynote)
        .collect()
}

/// Earliest event starting after `now`.
pub fn next_session(programme: &Programme, now: DateTime<Utc>) -> Option<&ConferenceEvent> {
    programme.events.iter().find(|e| e.start > now)
}

/// Best-scoring future session, tutorial or workshop not yet suggested.
pub fn recommend_session<'a>(
    programme: &'a Programme,
    profile: &InterestProfile,
    now: DateTime<Utc>,
) -> Option<&'a ConferenceEvent> {
    let mut best: Option<(&ConferenceEvent, f64)> = None;
    // events are already in (start, id) order, so only a strictly higher score replaces
    for e in &programme.events {
        if !e.kind.recommendable() || e.end <= now || profile.recommended_ids.contains(&e.id) {
            continue;
        }
        let score = interest_score(e, profile);
        if score > 0.0 && best.is_none_or(|(_, s)| score > s) {
            best = Some((e, score));
        }
    }
    best.map(|(e, _)| e)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleFilter {
    Day(NaiveDate),
    Room(String),
    Speaker(String),
}

pub fn schedule_query<'a>(
    programme: &'a Programme,
    filter: &ScheduleFilter,
) -> Vec<&'a ConferenceEvent> {
    programme
        .events
        .iter()
        .filter(|e| match filter {
            ScheduleFilter::Day(d) => e.start.date_naive() == *d,
            ScheduleFilter::Room(r) => e.room.eq_ignore_ascii_case(r),
            ScheduleFilter::Speaker(s) => e
                .speakers
                .iter()
                .any(|n| n.to_lowercase() == s.to_lowercase()),
        })
        .collect()
}

fn format_time(t: DateTime<Utc>) -> String {
    t.format("%a %d %b %H:%M").to_string()
}

/// The conference skill backed by a loaded programme.
#[derive(Debug, Clone)]
pub struct ConferenceSkill {
    programme: Programme,
}

impl ConferenceSkill {
    pub fn new(programme: Programme) -> Self {
        Self { programme }
    }

    pub fn programme(&self) -> &Programme {
        &self.programme
    }

    /// Resolves a `day` entity value ("today", "tomorrow" or a 1-based conference day).
    pub fn resolve_day(&self, value: &str, now: DateTime<Utc>) -> Option<NaiveDate> {
        match value {
            "today" => Some(now.date_naive()),
            "tomorrow" => Some(now.date_naive() + Duration::days(1)),
            n => {
                let n: i64 = n.parse().ok()?;
                (n >= 1).then(|| self.programme.first_day() + Duration::days(n - 1))
            }
        }
    }

    fn profile(ctx: &SkillContext<'_>) -> InterestProfile {
        let mut p = InterestProfile::new(ctx.slot_list(SLOT_INTERESTS));
        p.recommended_ids = ctx.slot_list(SLOT_RECOMMENDED).into_iter().collect();
        p
    }

    fn recommend(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        let profile = Self::profile(ctx);
        ctx.remember(MemoryWrite::Interests {
            interests: profile.interests.clone(),
        });
        match recommend_session(&self.programme, &profile, ctx.now) {
            Some(e) => {
                let e = e.clone();
                let mut seen = ctx.slot_list(SLOT_RECOMMENDED);
                seen.push(e.id.clone());
                ctx.set_slot(SLOT_RECOMMENDED, SlotValue::List(seen));
                ctx.set_slot(SLOT_CURRENT, SlotValue::Text(e.id.clone()));
                ctx.say(
                    "utter_session_recommendation",
                    &bindings([
                        ("title", e.title.clone()),
                        ("kind", e.kind.as_str().to_string()),
                        ("time", format_time(e.start)),
                        ("room", e.room.clone()),
                        ("summary", e.summary().to_string()),
                    ]),
                )?;
                ctx.say("utter_session_offer", &Bindings::new())?;
                ctx.set_slot(AWAITING_SLOT, SlotValue::Text(AWAIT_OFFER.into()));
                Ok(())
            }
            None => ctx.say("utter_no_session_match", &Bindings::new()),
        }
    }

    fn keynotes(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        let list = keynotes(&self.programme);
        if list.is_empty() {
            return ctx.say("utter_keynotes_none", &Bindings::new());
        }
        let entries = list
            .iter()
            .map(|e| {
                format!(
                    "{}: {} ({}, {})",
                    e.speakers.join(" & "),
                    e.title,
                    format_time(e.start),
                    e.room
                )
            })
            .collect();
        ctx.push(ResponsePayload::ListCard {
            title: "Keynote speakers".into(),
            entries,
        });
        Ok(())
    }

    fn next(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        match next_session(&self.programme, ctx.now) {
            Some(e) => {
                let b = bindings([
                    ("title", e.title.clone()),
                    ("time", format_time(e.start)),
                    ("room", e.room.clone()),
                    ("summary", e.summary().to_string()),
                ]);
                ctx.say("utter_next_session", &b)
            }
            None => ctx.say("utter_conference_over", &Bindings::new()),
        }
    }

    fn schedule(&self, ctx: &mut SkillContext<'_>, nlu: &NluResult) -> Result<(), SkillError> {
        let (filter, label) = if let Some(s) = nlu.first_entity("speaker") {
            (ScheduleFilter::Speaker(s.to_string()), s.to_string())
        } else if let Some(r) = nlu.first_entity("room") {
            (ScheduleFilter::Room(r.to_string()), r.to_string())
        } else {
            let today = ctx.now.date_naive();
            let on_today = self
                .programme
                .events
                .iter()
                .any(|e| e.start.date_naive() == today);
            let day = nlu
                .first_entity("day")
                .and_then(|d| self.resolve_day(d, ctx.now))
                .unwrap_or(if on_today {
                    today
                } else {
                    self.programme.first_day()
                });
            (ScheduleFilter::Day(day), day.format("%A %d %B").to_string())
        };
        let events = schedule_query(&self.programme, &filter);
        if events.is_empty() {
            return ctx.say("utter_schedule_empty", &bindings([("filter", label)]));
        }
        let entries = events
            .iter()
            .map(|e| {
                format!(
                    "{}-{} {} ({})",
                    format_time(e.start),
                    e.end.format("%H:%M"),
                    e.title,
                    e.room
                )
            })
            .collect();
        ctx.push(ResponsePayload::ListCard {
            title: format!("Schedule: {label}"),
            entries,
        });
        Ok(())
    }

    fn add_interests(ctx: &mut SkillContext<'_>, nlu: &NluResult) -> bool {
        let mut interests = ctx.slot_list(SLOT_INTERESTS);
        let before = interests.len();
        for e in nlu.entities_of("topic") {
            if !interests.contains(&e.value) {
                interests.push(e.value.clone());
            }
        }
        let changed = interests.len() != before;
        if changed {
            ctx.set_slot(SLOT_INTERESTS, SlotValue::List(interests));
        }
        changed
    }

    fn request_recommendation(
        &self,
        ctx: &mut SkillContext<'_>,
        nlu: &NluResult,
    ) -> Result<(), SkillError> {
        Self::add_interests(ctx, nlu);
        if !ctx.slot_list(SLOT_INTERESTS).is_empty() {
            return self.recommend(ctx);
        }
        let prior = ctx.slot_list(SLOT_PRIOR_INTERESTS);
        if !prior.is_empty() {
            ctx.set_slot(AWAITING_SLOT, SlotValue::Text(AWAIT_CONFIRM.into()));
            return ctx.say(
                "utter_confirm_interests",
                &bindings([("interests", prior.join(", "))]),
            );
        }
        ctx.then(Action::activate(INTEREST_FORM));
        Ok(())
    }
}

impl Skill for ConferenceSkill {
    fn descriptor(&self) -> SkillDescriptor {
        SkillDescriptor::new(
            CONFERENCE_SKILL,
            [
                "ask_keynotes",
                "ask_next_session",
                "ask_schedule",
                "request_session_rec",
                "inform_interest",
            ],
        )
    }

    fn required_templates(&self) -> Vec<&'static str> {
        vec![
            "utter_keynotes_none",
            "utter_next_session",
            "utter_conference_over",
            "utter_schedule_empty",
            "utter_confirm_interests",
            "utter_session_recommendation",
            "utter_session_offer",
            "utter_no_session_match",
            "utter_session_ok",
        ]
    }

    fn gazetteers(&self) -> Vec<Gazetteer> {
        let mut speakers = Gazetteer::new("speaker");
        for s in self.programme.speakers() {
            speakers = speakers.entry(s, s);
        }
        let mut rooms = Gazetteer::new("room");
        for r in self.programme.rooms() {
            rooms = rooms.entry(r, r);
        }
        vec![speakers, rooms]
    }

    fn handle(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        let nlu = ctx.nlu;
        if let Trigger::FormCompleted(_) = ctx.trigger {
            return self.recommend(ctx);
        }
        let awaiting = ctx.slot_text(AWAITING_SLOT).map(str::to_string);
        match (ctx.intent(), awaiting.as_deref()) {
            ("affirm", Some(AWAIT_CONFIRM)) => {
                let prior = ctx.slot_list(SLOT_PRIOR_INTERESTS);
                ctx.set_slot(SLOT_INTERESTS, SlotValue::List(prior));
                self.recommend(ctx)
            }
            ("deny", Some(AWAIT_CONFIRM)) => {
                ctx.then(Action::activate(INTEREST_FORM));
                Ok(())
            }
            ("affirm" | "request_next", Some(AWAIT_OFFER)) => self.recommend(ctx),
            ("deny", Some(AWAIT_OFFER)) => ctx.say("utter_session_ok", &Bindings::new()),
            ("ask_keynotes", _) => self.keynotes(ctx),
            ("ask_next_session", _) => self.next(ctx),
            ("ask_schedule", _) => self.schedule(ctx, nlu),
            ("request_session_rec", _) => self.request_recommendation(ctx, nlu),
            ("inform_interest", _) => {
                if Self::add_interests(ctx, nlu) {
                    self.recommend(ctx)
                } else {
                    self.request_recommendation(ctx, nlu)
                }
            }
            (other, _) => Err(SkillError::Internal(format!(
                "conference skill cannot handle `{other}`"
            ))),
        }
    }
}
