//! Offline administration: analytics reports and profile maintenance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::logstore::{
    conversation_length_histogram, format_table, load_dir, turns_per_skill, LogError, LogStore,
};
use crate::profile::{qr_token, ProfileError, ProfileStore, UserProfile};

#[derive(Debug, Error)]
pub enum AdminError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("encoding report: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnalyticsView {
    Histogram,
    Skills,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    Json,
    #[default]
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnalyticsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conversation_lengths: Option<BTreeMap<usize, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turns_per_skill: Option<BTreeMap<String, usize>>,
}

impl AnalyticsReport {
    pub fn from_dir(dir: &Path, view: AnalyticsView) -> Result<Self, AdminError> {
        let records = load_dir(dir)?;
        let hist = matches!(view, AnalyticsView::Histogram | AnalyticsView::Both);
        let skills = matches!(view, AnalyticsView::Skills | AnalyticsView::Both);
        Ok(Self {
            conversation_lengths: hist.then(|| conversation_length_histogram(&records)),
            turns_per_skill: skills.then(|| turns_per_skill(&records)),
        })
    }

    pub fn render(&self, format: OutputFormat) -> Result<String, AdminError> {
        Ok(match format {
            OutputFormat::Json => serde_json::to_string_pretty(self)? + "\n",
            OutputFormat::Table => {
                let mut parts = Vec::new();
                if let Some(h) = &self.conversation_lengths {
                    parts.push(format_table(("turns", "conversations"), h));
                }
                if let Some(s) = &self.turns_per_skill {
                    parts.push(format_table(("skill", "bot_turns"), s));
                }
                parts.join("\n")
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeletionReport {
    pub user_id: String,
    pub scrubbed_records: usize,
}

/// Removes a profile and strips its attribution from every log record.
pub fn delete_profile(log_dir: &Path, user_id: &str) -> Result<DeletionReport, AdminError> {
    let profiles = ProfileStore::open(log_dir)?;
    profiles.delete(user_id)?;
    let scrubbed_records = LogStore::open(log_dir)?.scrub_user(user_id)?;
    Ok(DeletionReport {
        user_id: user_id.to_string(),
        scrubbed_records,
    })
}

pub fn export_profiles(log_dir: &Path) -> Result<String, AdminError> {
    Ok(ProfileStore::open(log_dir)?.export_json()?)
}

pub fn import_profiles(log_dir: &Path, document: &str) -> Result<usize, AdminError> {
    Ok(ProfileStore::open(log_dir)?.import_json(document)?)
}

/// Creates a profile and returns it with the payload to print on its badge.
pub fn register_profile(
    log_dir: &Path,
    user_id: &str,
    display_name: Option<&str>,
) -> Result<(UserProfile, String), AdminError> {
    let profile = ProfileStore::open(log_dir)?.register(user_id, display_name)?;
    Ok((profile, qr_token(user_id)))
}
