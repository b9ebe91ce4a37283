//! Channel-independent response payloads produced by skills.

use serde::{Deserialize, Serialize};

/// Rich or plain content for one bot message.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponsePayload {
    Text {
        text: String,
    },
    ListCard {
        title: String,
        entries: Vec<String>,
    },
    MapCard {
        name: String,
        lat: f64,
        lon: f64,
        map_ref: String,
        #[serde(default)]
        caption: String,
    },
    ItemCard {
        title: String,
        subtitle: String,
        rating: f64,
        price: String,
        body: String,
    },
    QuickReplies {
        prompt: String,
        options: Vec<String>,
    },
    IdentifyRequest {
        reason: String,
    },
}

impl ResponsePayload {
    pub fn text(text: impl Into<String>) -> Self {
        ResponsePayload::Text { text: text.into() }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, ResponsePayload::Text { .. })
    }

    /// Checks the structural invariants of each variant.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ResponsePayload::Text { text } if text.trim().is_empty() => {
                Err("text payload is empty".into())
            }
            ResponsePayload::QuickReplies { options, .. } if !(1..=6).contains(&options.len()) => {
                Err(format!(
                    "quick replies need 1-6 options, got {}",
                    options.len()
                ))
            }
            ResponsePayload::MapCard { lat, lon, .. }
                if !(-90.0..=90.0).contains(lat) || !(-180.0..=180.0).contains(lon) =>
            {
                Err(format!("coordinates out of range: {lat},{lon}"))
            }
            _ => Ok(()),
        }
    }
}

/// Static map reference for a coordinate pair (RFC 5870 `geo:` URI).
pub fn map_reference(lat: f64, lon: f64) -> String {
    format!("geo:{lat},{lon}")
}

/// One bot message plus its provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Response {
    pub payload: ResponsePayload,
    /// Template id when the text came from the catalog; drives variant cycling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    /// Skill the response is attributed to.
    pub skill: String,
}

impl Response {
    pub fn new(payload: ResponsePayload, skill: impl Into<String>) -> Self {
        Self {
            payload,
            template: None,
            skill: skill.into(),
        }
    }
}
