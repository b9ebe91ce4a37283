//! Personalization layer: badge and recognition-token identification,
//! explicit consent, and a small returning-user memory.
//!
//! Memory is only ever written for profiles whose consent is `granted`;
//! the store refuses the write otherwise and keeps an audit trail of every
//! write it accepted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{Session, SlotValue};
use crate::response::{Response, ResponsePayload};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;
pub const PROFILE_FILE: &str = "profiles.json";

/// Versioned prefix of badge QR payloads: `concierge1:<user_id>`.
pub const QR_PREFIX: &str = "concierge1:";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consent {
    #[default]
    Unknown,
    Granted,
    Denied,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    pub accepted_poi_ids: Vec<String>,
    pub interests: BTreeSet<String>,
    pub last_seen: Option<DateTime<Utc>>,
}

impl Memory {
    pub fn is_empty(&self) -> bool {
        self.accepted_poi_ids.is_empty() && self.interests.is_empty() && self.last_seen.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub display_name: Option<String>,
    pub consent: Consent,
    pub identifiers: BTreeSet<String>,
    pub memory: Memory,
}

impl UserProfile {
    pub fn badge_token(&self) -> String {
        qr_token(&self.user_id)
    }
}

/// A memory update requested by a skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryWrite {
    AcceptedPoi { id: String },
    Interests { interests: Vec<String> },
    Seen,
}

/// One accepted memory write.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub user_id: String,
    pub write: MemoryWrite,
    pub consent_at_write: Consent,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("profile `{0}` already exists")]
    DuplicateProfile(String),
    #[error("identifier already belongs to profile `{0}`")]
    IdentifierTaken(String),
    #[error("profile `{0}` has not granted consent")]
    ConsentRequired(String),
    #[error("consent was not requested in this session")]
    ConsentNotRequested,
    #[error("consent was already answered in this session")]
    ConsentAlreadyAnswered,
    #[error("profile store I/O: {0}")]
    Io(String),
    #[error("profile store format: {0}")]
    Format(String),
}

pub fn qr_token(user_id: &str) -> String {
    format!("{QR_PREFIX}{user_id}")
}

/// User id carried by a badge QR payload, if the payload is one.
pub fn parse_qr(token: &str) -> Option<&str> {
    token.strip_prefix(QR_PREFIX).filter(|id| !id.is_empty())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoreDocument {
    schema_version: u32,
    profiles: BTreeMap<String, UserProfile>,
    #[serde(default)]
    audit: Vec<AuditEntry>,
}

#[derive(Debug, Default)]
struct Inner {
    profiles: BTreeMap<String, UserProfile>,
    index: HashMap<String, String>,
    audit: Vec<AuditEntry>,
}

impl Inner {
    fn rebuild_index(&mut self) -> Result<(), ProfileError> {
        self.index.clear();
        for p in self.profiles.values() {
            for id in &p.identifiers {
                if let Some(other) = self.index.insert(id.clone(), p.user_id.clone()) {
                    return Err(ProfileError::IdentifierTaken(other));
                }
            }
        }
        Ok(())
    }
}

/// Profile store, optionally persisted as one JSON document.
#[derive(Debug)]
pub struct ProfileStore {
    inner: RwLock<Inner>,
    path: Option<PathBuf>,
}

impl ProfileStore {
    pub fn in_memory() -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            path: None,
        }
    }

    /// Opens (or creates) `<dir>/profiles.json`.
    pub fn open(dir: &Path) -> Result<Self, ProfileError> {
        fs::create_dir_all(dir).map_err(|e| ProfileError::Io(e.to_string()))?;
        let path = dir.join(PROFILE_FILE);
        let mut inner = Inner::default();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| ProfileError::Io(e.to_string()))?;
            let doc: StoreDocument =
                serde_json::from_str(&text).map_err(|e| ProfileError::Format(e.to_string()))?;
            if doc.schema_version != PROFILE_SCHEMA_VERSION {
                return Err(ProfileError::Format(format!(
                    "unsupported schema_version {}",
                    doc.schema_version
                )));
            }
            inner.profiles = doc.profiles;
            inner.audit = doc.audit;
            inner.rebuild_index()?;
        }
        Ok(Self {
            inner: RwLock::new(inner),
            path: Some(path),
        })
    }

    fn persist(&self, inner: &Inner) -> Result<(), ProfileError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let doc = StoreDocument {
            schema_version: PROFILE_SCHEMA_VERSION,
            profiles: inner.profiles.clone(),
            audit: inner.audit.clone(),
        };
        let text =
            serde_json::to_string_pretty(&doc).map_err(|e| ProfileError::Format(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        let io = |e: std::io::Error| ProfileError::Io(e.to_string());
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }

    fn write<T>(
        &self,
        op: impl FnOnce(&mut Inner) -> Result<T, ProfileError>,
    ) -> Result<T, ProfileError> {
        let mut inner = self.inner.write().expect("profile lock poisoned");
        let out = op(&mut inner)?;
        self.persist(&inner)?;
        Ok(out)
    }

    /// Creates a profile whose badge token is `concierge1:<user_id>`.
    pub fn register(
        &self,
        user_id: &str,
        display_name: Option<&str>,
    ) -> Result<UserProfile, ProfileError> {
        self.write(|inner| {
            if inner.profiles.contains_key(user_id) {
                return Err(ProfileError::DuplicateProfile(user_id.to_string()));
            }
            let badge = qr_token(user_id);
            if let Some(owner) = inner.index.get(&badge) {
                return Err(ProfileError::IdentifierTaken(owner.clone()));
            }
            let profile = UserProfile {
                user_id: user_id.to_string(),
                display_name: display_name.map(str::to_string),
                consent: Consent::Unknown,
                identifiers: BTreeSet::from([badge.clone()]),
                memory: Memory::default(),
            };
            inner.index.insert(badge, user_id.to_string());
            inner.profiles.insert(user_id.to_string(), profile.clone());
            Ok(profile)
        })
    }

    pub fn get(&self, user_id: &str) -> Option<UserProfile> {
        self.inner
            .read()
            .expect("profile lock poisoned")
            .profiles
            .get(user_id)
            .cloned()
    }

    pub fn all(&self) -> Vec<UserProfile> {
        self.inner
            .read()
            .expect("profile lock poisoned")
            .profiles
            .values()
            .cloned()
            .collect()
    }

    /// Profile owning `token`, if any.
    pub fn identify(&self, token: &str) -> Option<UserProfile> {
        let inner = self.inner.read().expect("profile lock poisoned");
        inner
            .index
            .get(token)
            .and_then(|u| inner.profiles.get(u))
            .cloned()
    }

    /// Attaches an extra identifier. Requires granted consent.
    pub fn link(&self, user_id: &str, token: &str) -> Result<(), ProfileError> {
        self.write(|inner| {
            let consent = inner
                .profiles
                .get(user_id)
                .ok_or_else(|| ProfileError::UnknownProfile(user_id.to_string()))?
                .consent;
            if consent != Consent::Granted {
                return Err(ProfileError::ConsentRequired(user_id.to_string()));
            }
            match inner.index.get(token) {
                Some(owner) if owner == user_id => return Ok(()),
                Some(owner) => return Err(ProfileError::IdentifierTaken(owner.clone())),
                None => {}
            }
            inner.index.insert(token.to_string(), user_id.to_string());
            inner
                .profiles
                .get_mut(user_id)
                .expect("checked above")
                .identifiers
                .insert(token.to_string());
            Ok(())
        })
    }

    /// Stores the latest consent decision. Denial purges recognition
    /// identifiers (the badge token stays) and wipes memory.
    pub fn set_consent(
        &self,
        user_id: &str,
        decision: Consent,
    ) -> Result<UserProfile, ProfileError> {
        self.write(|inner| {
            let profile = inner
                .profiles
                .get_mut(user_id)
                .ok_or_else(|| ProfileError::UnknownProfile(user_id.to_string()))?;
            profile.consent = decision;
            if decision != Consent::Granted {
                let badge = qr_token(user_id);
                let purged: Vec<String> = profile
                    .identifiers
                    .iter()
                    .filter(|t| **t != badge)
                    .cloned()
                    .collect();
                profile.identifiers.retain(|t| *t == badge);
                profile.memory = Memory::default();
                let profile = profile.clone();
                for t in purged {
                    inner.index.remove(&t);
                }
                return Ok(profile);
            }
            Ok(profile.clone())
        })
    }

    /// Applies a memory write; refused unless consent is granted.
    pub fn remember(
        &self,
        user_id: &str,
        write: MemoryWrite,
        now: DateTime<Utc>,
    ) -> Result<(), ProfileError> {
        self.write(|inner| {
            let profile = inner
                .profiles
                .get_mut(user_id)
                .ok_or_else(|| ProfileError::UnknownProfile(user_id.to_string()))?;
            if profile.consent != Consent::Granted {
                return Err(ProfileError::ConsentRequired(user_id.to_string()));
            }
            match &write {
                MemoryWrite::AcceptedPoi { id } => {
                    if !profile.memory.accepted_poi_ids.contains(id) {
                        profile.memory.accepted_poi_ids.push(id.clone());
                    }
                }
                MemoryWrite::Interests { interests } => {
                    profile.memory.interests.extend(interests.iter().cloned());
                }
                MemoryWrite::Seen => {}
            }
            profile.memory.last_seen = Some(now);
            inner.audit.push(AuditEntry {
                user_id: user_id.to_string(),
                write,
                consent_at_write: Consent::Granted,
                at: now,
            });
            Ok(())
        })
    }

    /// Removes the profile, its identifiers and its audit trail.
    pub fn delete(&self, user_id: &str) -> Result<UserProfile, ProfileError> {
        self.write(|inner| {
            let profile = inner
                .profiles
                .remove(user_id)
                .ok_or_else(|| ProfileError::UnknownProfile(user_id.to_string()))?;
            for t in &profile.identifiers {
                inner.index.remove(t);
            }
            inner.audit.retain(|a| a.user_id != user_id);
            Ok(profile)
        })
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.inner
            .read()
            .expect("profile lock poisoned")
            .audit
            .clone()
    }

    pub fn export_json(&self) -> Result<String, ProfileError> {
        let inner = self.inner.read().expect("profile lock poisoned");
        let doc = StoreDocument {
            schema_version: PROFILE_SCHEMA_VERSION,
            profiles: inner.profiles.clone(),
            audit: inner.audit.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| ProfileError::Format(e.to_string()))
    }

    /// Merges profiles from an exported document. Existing ids are rejected.
    pub fn import_json(&self, text: &str) -> Result<usize, ProfileError> {
        let doc: StoreDocument =
            serde_json::from_str(text).map_err(|e| ProfileError::Format(e.to_string()))?;
        if doc.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(ProfileError::Format(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        self.write(|inner| {
            for id in doc.profiles.keys() {
                if inner.profiles.contains_key(id) {
                    return Err(ProfileError::DuplicateProfile(id.clone()));
                }
            }
            let mut staged = Inner {
                profiles: inner.profiles.clone(),
                index: HashMap::new(),
                audit: inner.audit.clone(),
            };
            let count = doc.profiles.len();
            staged.profiles.extend(doc.profiles);
            staged.audit.extend(doc.audit);
            staged.rebuild_index()?;
            *inner = staged;
            Ok(count)
        })
    }
}

/// Asks for permission to identify the user. At most once per session.
pub fn request_consent(session: &mut Session) -> Option<Response> {
    if session.consent.requested {
        return None;
    }
    session.consent.requested = true;
    Some(Response {
        payload: ResponsePayload::QuickReplies {
            prompt: "May I try to recognize you and remember what you liked, so I can personalize my suggestions?".into(),
            options: vec![CONSENT_ALLOW.into(), CONSENT_DENY.into()],
        },
        template: Some(CONSENT_PROMPT.into()),
        skill: crate::skills::CORE_SKILL.into(),
    })
}

/// Template id carried by the consent question.
pub const CONSENT_PROMPT: &str = "consent_prompt";
pub const CONSENT_ALLOW: &str = "Allow";
pub const CONSENT_DENY: &str = "Deny";

/// Records the answer to a consent request issued in this session.
///
/// When no profile is bound yet the decision is kept on the session and
/// applied once the user identifies.
pub fn record_consent(
    store: &ProfileStore,
    session: &mut Session,
    decision: Consent,
) -> Result<Option<UserProfile>, ProfileError> {
    if !session.consent.requested {
        return Err(ProfileError::ConsentNotRequested);
    }
    if session.consent.answer.is_some() {
        return Err(ProfileError::ConsentAlreadyAnswered);
    }
    session.consent.answer = Some(decision);
    if decision == Consent::Denied {
        session.consent.pending_token = None;
    }
    match &session.user_id {
        Some(user) => store.set_consent(user, decision).map(Some),
        None => Ok(None),
    }
}

/// Context bindings derived from a consented profile.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Personalization {
    pub display_name: Option<String>,
    pub prior_interests: Vec<String>,
    pub excluded_poi_ids: Vec<String>,
}

pub const SLOT_USER_NAME: &str = "user_name";
pub const SLOT_PRIOR_INTERESTS: &str = "prior_interests";
pub const SLOT_POI_EXCLUDED: &str = "poi_excluded";

/// Bindings for tailoring responses. Non-consented profiles yield nothing.
pub fn personalize(profile: &UserProfile) -> Personalization {
    if profile.consent != Consent::Granted {
        return Personalization::default();
    }
    Personalization {
        display_name: profile.display_name.clone(),
        prior_interests: profile.memory.interests.iter().cloned().collect(),
        excluded_poi_ids: profile.memory.accepted_poi_ids.clone(),
    }
}

impl Personalization {
    /// Slot values to seed into a session.
    pub fn slots(&self) -> Vec<(&'static str, SlotValue)> {
        let mut out = Vec::new();
        if let Some(n) = &self.display_name {
            out.push((SLOT_USER_NAME, SlotValue::Text(n.clone())));
        }
        if !self.prior_interests.is_empty() {
            out.push((
                SLOT_PRIOR_INTERESTS,
                SlotValue::List(self.prior_interests.clone()),
            ));
        }
        if !self.excluded_poi_ids.is_empty() {
            out.push((
                SLOT_POI_EXCLUDED,
                SlotValue::List(self.excluded_poi_ids.clone()),
            ));
        }
        out
    }
}
