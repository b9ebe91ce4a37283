//! Point-of-interest recommendation.
//!
//! Preferences are two keyword lists (liked, disliked) plus a category.
//! Each recommendation picks the top-rated item that matches: same category,
//! shares a liked keyword when any are given, has no disliked keyword, and
//! has not been rejected.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Action, SlotValue, AWAITING_SLOT};
use crate::nlu::{Gazetteer, NluResult};
use crate::profile::{MemoryWrite, SLOT_POI_EXCLUDED};
use crate::response::{map_reference, ResponsePayload};
use crate::skills::{
    bindings, Bindings, Skill, SkillContext, SkillDescriptor, SkillError, Trigger,
};

pub const POI_SKILL: &str = "poi";
pub const POI_FORM: &str = "poi_form";
pub const CATALOG_SCHEMA_VERSION: u32 = 1;

pub const SLOT_CATEGORY: &str = "poi_category";
pub const SLOT_LIKED: &str = "liked_keywords";
pub const SLOT_DISLIKED: &str = "disliked_keywords";
pub const SLOT_REJECTED: &str = "poi_rejected";
pub const SLOT_CURRENT: &str = "poi_current";
pub const SLOT_ACCEPTED: &str = "poi_accepted";

const AWAIT_OFFER: &str = "poi_offer";
const AWAIT_RELAX: &str = "poi_relax";

/// Entity types whose values count as preference keywords.
pub const KEYWORD_ENTITIES: [&str; 3] = ["cuisine", "activity", "keyword"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Restaurant,
    Bar,
    Cafe,
    Museum,
    Park,
    Activity,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 6] = [
        PoiCategory::Restaurant,
        PoiCategory::Bar,
        PoiCategory::Cafe,
        PoiCategory::Museum,
        PoiCategory::Park,
        PoiCategory::Activity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Restaurant => "restaurant",
            PoiCategory::Bar => "bar",
            PoiCategory::Cafe => "cafe",
            PoiCategory::Museum => "museum",
            PoiCategory::Park => "park",
            PoiCategory::Activity => "activity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Ordered so that ties in duration prefer walking, then the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Walk,
    Bus,
    Taxi,
}

impl TransportMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransportMode::Walk => "walk",
            TransportMode::Bus => "bus",
            TransportMode::Taxi => "taxi",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            TransportMode::Walk => "on foot",
            TransportMode::Bus => "by bus",
            TransportMode::Taxi => "by taxi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TransportMode::Walk, TransportMode::Bus, TransportMode::Taxi]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportOption {
    pub mode: TransportMode,
    pub instructions: String,
    pub duration_minutes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiItem {
    pub id: String,
    pub name: String,
    pub category: PoiCategory,
    pub keywords: BTreeSet<String>,
    pub price_level: u8,
    pub rating: f64,
    pub review_count: u32,
    pub address: String,
    pub coordinates: Coordinates,
    #[serde(default)]
    pub transport_options: Vec<TransportOption>,
    #[serde(default)]
    pub description: String,
}

impl PoiItem {
    pub fn price_glyphs(&self) -> String {
        price_glyphs(self.price_level)
    }
}

/// `$` repeated once per price level.
pub fn price_glyphs(level: u8) -> String {
    "$".repeat(level as usize)
}

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("unsupported catalog schema_version {0}")]
    SchemaVersion(u32),
    #[error("catalog has no items")]
    Empty,
    #[error("item `{item}`: invalid {field}: {reason}")]
    Invalid {
        item: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("duplicate item name `{0}`")]
    DuplicateName(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub schema_version: u32,
    pub items: Vec<PoiItem>,
}

/// Validated, immutable item collection.
#[derive(Debug, Clone)]
pub struct Catalog {
    items: Vec<PoiItem>,
    by_id: HashMap<String, usize>,
}

pub fn load_catalog(json: &str) -> Result<Catalog, CatalogError> {
    let doc: CatalogDocument =
        serde_json::from_str(json).map_err(|e| CatalogError::Parse(e.to_string()))?;
    if doc.schema_version != CATALOG_SCHEMA_VERSION {
        return Err(CatalogError::SchemaVersion(doc.schema_version));
    }
    Catalog::new(doc.items)
}

impl Catalog {
    pub fn new(items: Vec<PoiItem>) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut by_id = HashMap::new();
        let mut names = HashSet::new();
        for (i, item) in items.iter().enumerate() {
            validate_item(item)?;
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateId(item.id.clone()));
            }
            if !names.insert(item.name.as_str()) {
                return Err(CatalogError::DuplicateName(item.name.clone()));
            }
        }
        Ok(Self { items, by_id })
    }

    pub fn items(&self) -> &[PoiItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PoiItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    /// Every keyword used by some item.
    pub fn keywords(&self) -> BTreeSet<&str> {
        self.items
            .iter()
            .flat_map(|i| i.keywords.iter().map(String::as_str))
            .collect()
    }
}

fn validate_item(item: &PoiItem) -> Result<(), CatalogError> {
    let invalid = |field: &'static str, reason: String| CatalogError::Invalid {
        item: item.id.clone(),
        field,
        reason,
    };
    if item.id.trim().is_empty() {
        return Err(invalid("id", "empty".into()));
    }
    if item.name.trim().is_empty() {
        return Err(invalid("name", "empty".into()));
    }
    if !(item.rating.is_finite() && (0.0..=5.0).contains(&item.rating)) {
        return Err(invalid("rating", format!("{} not in [0, 5]", item.rating)));
    }
    if !(1..=4).contains(&item.price_level) {
        return Err(invalid(
            "price_level",
            format!("{} not in [1, 4]", item.price_level),
        ));
    }
    let Coordinates { lat, lon } = item.coordinates;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(invalid("coordinates", format!("lat {lat} out of range")));
    }
    if !(-180.0..=180.0).contains(&lon) {
        return Err(invalid("coordinates", format!("lon {lon} out of range")));
    }
    if let Some(k) = item
        .keywords
        .iter()
        .find(|k| k.is_empty() || k.to_lowercase() != **k)
    {
        return Err(invalid(
            "keywords",
            format!("{k:?} must be non-empty lowercase"),
        ));
    }
    if item
        .transport_options
        .iter()
        .any(|t| t.duration_minutes == 0)
    {
        return Err(invalid(
            "transport_options",
            "duration_minutes must be positive".into(),
        ));
    }
    Ok(())
}

/// Elicited preferences for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoiPreferences {
    pub category: Option<PoiCategory>,
    pub liked: Vec<String>,
    pub disliked: Vec<String>,
    pub rejected_ids: BTreeSet<String>,
    pub accepted_id: Option<String>,
}

impl PoiPreferences {
    /// Later statements win: liking a keyword removes it from the dislikes.
    pub fn like(&mut self, keyword: &str) {
        self.disliked.retain(|k| k != keyword);
        if !self.liked.iter().any(|k| k == keyword) {
            self.liked.push(keyword.to_string());
        }
    }

    pub fn dislike(&mut self, keyword: &str) {
        self.liked.retain(|k| k != keyword);
        if !self.disliked.iter().any(|k| k == keyword) {
            self.disliked.push(keyword.to_string());
        }
    }

    pub fn reject(&mut self, id: &str) {
        if self.accepted_id.as_deref() != Some(id) {
            self.rejected_ids.insert(id.to_string());
        }
    }

    pub fn accept(&mut self, id: &str) {
        self.rejected_ids.remove(id);
        self.accepted_id = Some(id.to_string());
    }

    fn admits(&self, item: &PoiItem) -> bool {
        self.category.is_none_or(|c| item.category == c)
            && (self.liked.is_empty() || self.liked.iter().any(|k| item.keywords.contains(k)))
            && !self.disliked.iter().any(|k| item.keywords.contains(k))
            && !self.rejected_ids.contains(&item.id)
    }
}

/// Rating desc, then review count desc, then name asc.
pub fn rank_order(a: &PoiItem, b: &PoiItem) -> Ordering {
    b.rating
        .total_cmp(&a.rating)
        .then_with(|| b.review_count.cmp(&a.review_count))
        .then_with(|| a.name.cmp(&b.name))
}

/// Top-ranked admissible item.
pub fn recommend<'a>(catalog: &'a Catalog, prefs: &PoiPreferences) -> Option<&'a PoiItem> {
    catalog
        .items
        .iter()
        .filter(|i| prefs.admits(i))
        .min_by(|a, b| rank_order(a, b))
}

/// Requested mode if available, else the quickest option (ties: walk, bus, taxi).
pub fn select_transport(item: &PoiItem, mode: Option<TransportMode>) -> Option<&TransportOption> {
    if let Some(m) = mode {
        if let Some(opt) = item.transport_options.iter().find(|o| o.mode == m) {
            return Some(opt);
        }
    }
    item.transport_options
        .iter()
        .min_by_key(|o| (o.duration_minutes, o.mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetailAspect {
    Address,
    Price,
    Rating,
    Description,
}

impl DetailAspect {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "address" => Some(Self::Address),
            "price" => Some(Self::Price),
            "rating" => Some(Self::Rating),
            "description" => Some(Self::Description),
            _ => None,
        }
    }
}

/// The POI skill backed by a loaded catalog.
#[derive(Debug, Clone)]
pub struct PoiSkill {
    catalog: Catalog,
}

impl PoiSkill {
    pub fn new(catalog: Catalog) -> Self {
        Self { catalog }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Preferences as currently stored in the session slots.
    pub fn preferences(ctx: &SkillContext<'_>) -> PoiPreferences {
        let mut prefs = PoiPreferences {
            category: ctx.slot_text(SLOT_CATEGORY).and_then(PoiCategory::parse),
            liked: ctx.slot_list(SLOT_LIKED),
            disliked: ctx.slot_list(SLOT_DISLIKED),
            rejected_ids: ctx.slot_list(SLOT_REJECTED).into_iter().collect(),
            accepted_id: ctx.slot_text(SLOT_ACCEPTED).map(str::to_string),
        };
        prefs.rejected_ids.extend(ctx.slot_list(SLOT_POI_EXCLUDED));
        if let Some(a) = &prefs.accepted_id {
            prefs.rejected_ids.remove(a);
        }
        prefs
    }

    fn store_lists(ctx: &mut SkillContext<'_>, prefs: &PoiPreferences) {
        ctx.set_slot(SLOT_LIKED, SlotValue::List(prefs.liked.clone()));
        ctx.set_slot(SLOT_DISLIKED, SlotValue::List(prefs.disliked.clone()));
    }

    fn recommend_next(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        // whatever was on offer counts as passed over
        if let Some(current) = ctx.slot_text(SLOT_CURRENT).map(str::to_string) {
            let mut rejected = ctx.slot_list(SLOT_REJECTED);
            if !rejected.contains(&current) {
                rejected.push(current);
            }
            ctx.set_slot(SLOT_REJECTED, SlotValue::List(rejected));
            ctx.clear_slot(SLOT_CURRENT);
        }
        let prefs = Self::preferences(ctx);
        match recommend(&self.catalog, &prefs) {
            Some(item) => {
                ctx.push(ResponsePayload::ItemCard {
                    title: item.name.clone(),
                    subtitle: format!(
                        "{} \u{b7} {}",
                        capitalize(item.category.as_str()),
                        item.address
                    ),
                    rating: item.rating,
                    price: item.price_glyphs(),
                    body: item.description.clone(),
                });
                ctx.say("utter_poi_offer", &bindings([("name", item.name.clone())]))?;
                ctx.set_slot(SLOT_CURRENT, SlotValue::Text(item.id.clone()));
                ctx.set_slot(AWAITING_SLOT, SlotValue::Text(AWAIT_OFFER.into()));
            }
            None => {
                let relaxable = !prefs.liked.is_empty() || !prefs.disliked.is_empty();
                if relaxable {
                    ctx.say("utter_poi_no_match", &Bindings::new())?;
                    ctx.set_slot(AWAITING_SLOT, SlotValue::Text(AWAIT_RELAX.into()));
                } else {
                    ctx.say("utter_poi_exhausted", &Bindings::new())?;
                }
            }
        }
        Ok(())
    }

    fn accept(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        let Some(item) = ctx
            .slot_text(SLOT_CURRENT)
            .and_then(|id| self.catalog.get(id))
            .cloned()
        else {
            return ctx.say("utter_poi_need_selection", &Bindings::new());
        };
        ctx.set_slot(SLOT_ACCEPTED, SlotValue::Text(item.id.clone()));
        ctx.clear_slot(SLOT_CURRENT);
        ctx.remember(MemoryWrite::AcceptedPoi {
            id: item.id.clone(),
        });
        ctx.say("utter_poi_accepted", &bindings([("name", item.name)]))
    }

    fn accepted_item(&self, ctx: &SkillContext<'_>) -> Option<PoiItem> {
        ctx.slot_text(SLOT_ACCEPTED)
            .and_then(|id| self.catalog.get(id))
            .cloned()
    }

    /// Answers a question about the accepted item.
    pub fn followup_details(
        &self,
        ctx: &mut SkillContext<'_>,
        aspect: DetailAspect,
    ) -> Result<(), SkillError> {
        let Some(item) = self.accepted_item(ctx) else {
            return ctx.say("utter_poi_need_selection", &Bindings::new());
        };
        let (template, b) = match aspect {
            DetailAspect::Address => (
                "utter_poi_address",
                bindings([
                    ("name", item.name.clone()),
                    ("address", item.address.clone()),
                ]),
            ),
            DetailAspect::Price => (
                "utter_poi_price",
                bindings([("name", item.name.clone()), ("price", item.price_glyphs())]),
            ),
            DetailAspect::Rating => (
                "utter_poi_rating",
                bindings([
                    ("name", item.name.clone()),
                    ("rating", format!("{:.1}", item.rating)),
                    ("reviews", item.review_count.to_string()),
                ]),
            ),
            DetailAspect::Description => (
                "utter_poi_description",
                bindings([
                    ("name", item.name.clone()),
                    ("description", item.description.clone()),
                ]),
            ),
        };
        ctx.say(template, &b)?;
        if ctx.session.rich_display_available() {
            ctx.push(ResponsePayload::ItemCard {
                title: item.name.clone(),
                subtitle: item.address.clone(),
                rating: item.rating,
                price: item.price_glyphs(),
                body: item.description.clone(),
            });
        }
        Ok(())
    }

    /// Directions to the accepted item.
    pub fn transport(
        &self,
        ctx: &mut SkillContext<'_>,
        mode: Option<TransportMode>,
    ) -> Result<(), SkillError> {
        let Some(item) = self.accepted_item(ctx) else {
            return ctx.say("utter_poi_need_selection", &Bindings::new());
        };
        let Some(option) = select_transport(&item, mode).cloned() else {
            return ctx.say(
                "utter_no_directions",
                &bindings([("name", item.name.clone())]),
            );
        };
        ctx.say(
            "utter_transport",
            &bindings([
                ("name", item.name.clone()),
                ("instructions", option.instructions.clone()),
                ("minutes", option.duration_minutes.to_string()),
                ("mode", option.mode.phrase().to_string()),
            ]),
        )?;
        if ctx.session.rich_display_available() {
            let Coordinates { lat, lon } = item.coordinates;
            ctx.push(ResponsePayload::MapCard {
                name: item.name.clone(),
                lat,
                lon,
                map_ref: map_reference(lat, lon),
                caption: format!("{}, {} min", option.mode.as_str(), option.duration_minutes),
            });
        }
        Ok(())
    }

    fn update_preferences(
        &self,
        ctx: &mut SkillContext<'_>,
        nlu: &NluResult,
        negative: bool,
    ) -> bool {
        let mut prefs = Self::preferences(ctx);
        let mut changed = false;
        for e in &nlu.entities {
            if KEYWORD_ENTITIES.contains(&e.entity_type.as_str()) {
                if negative {
                    prefs.dislike(&e.value);
                } else {
                    prefs.like(&e.value);
                }
                changed = true;
            }
        }
        if changed {
            Self::store_lists(ctx, &prefs);
        }
        changed
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl Skill for PoiSkill {
    fn descriptor(&self) -> SkillDescriptor {
        SkillDescriptor::new(
            POI_SKILL,
            [
                "request_poi",
                "inform_preference",
                "state_dislike",
                "request_next",
                "ask_directions",
                "ask_poi_detail",
            ],
        )
    }

    fn required_templates(&self) -> Vec<&'static str> {
        vec![
            "utter_poi_offer",
            "utter_poi_no_match",
            "utter_poi_exhausted",
            "utter_poi_accepted",
            "utter_poi_need_selection",
            "utter_poi_address",
            "utter_poi_price",
            "utter_poi_rating",
            "utter_poi_description",
            "utter_transport",
            "utter_no_directions",
            "utter_poi_ok",
            "utter_poi_preferences_noted",
        ]
    }

    fn gazetteers(&self) -> Vec<Gazetteer> {
        vec![Gazetteer::identity("keyword", self.catalog.keywords())]
    }

    fn handle(&self, ctx: &mut SkillContext<'_>) -> Result<(), SkillError> {
        if let Trigger::FormCompleted(_) = ctx.trigger {
            return self.recommend_next(ctx);
        }
        let nlu = ctx.nlu;
        let awaiting = ctx.slot_text(AWAITING_SLOT).map(str::to_string);
        match (ctx.intent(), awaiting.as_deref()) {
            ("affirm", Some(AWAIT_OFFER)) => self.accept(ctx),
            ("deny" | "request_next", Some(AWAIT_OFFER)) => self.recommend_next(ctx),
            ("affirm", Some(AWAIT_RELAX)) => {
                ctx.set_slot(SLOT_LIKED, SlotValue::List(Vec::new()));
                ctx.set_slot(SLOT_DISLIKED, SlotValue::List(Vec::new()));
                self.recommend_next(ctx)
            }
            ("deny", Some(AWAIT_RELAX)) => ctx.say("utter_poi_ok", &Bindings::new()),
            ("request_next", _) => {
                if ctx.slot_text(SLOT_CATEGORY).is_some() {
                    self.recommend_next(ctx)
                } else {
                    ctx.say("utter_poi_need_selection", &Bindings::new())
                }
            }
            ("inform_preference" | "state_dislike", _) => {
                let negative = ctx.intent() == "state_dislike";
                if ctx.slot_text(SLOT_CATEGORY).is_none() {
                    ctx.then(Action::activate(POI_FORM));
                    return Ok(());
                }
                if !self.update_preferences(ctx, nlu, negative) {
                    return ctx.say("utter_poi_preferences_noted", &Bindings::new());
                }
                ctx.clear_slot(SLOT_ACCEPTED);
                self.recommend_next(ctx)
            }
            ("ask_directions", _) => {
                let mode = nlu.first_entity("mode").and_then(TransportMode::parse);
                self.transport(ctx, mode)
            }
            ("ask_poi_detail", _) => {
                let aspect = nlu
                    .first_entity("aspect")
                    .and_then(DetailAspect::parse)
                    .unwrap_or(DetailAspect::Description);
                self.followup_details(ctx, aspect)
            }
            ("request_poi", _) => {
                ctx.then(Action::activate(POI_FORM));
                Ok(())
            }
            (other, _) => Err(SkillError::Internal(format!(
                "poi skill cannot handle `{other}`"
            ))),
        }
    }
}
