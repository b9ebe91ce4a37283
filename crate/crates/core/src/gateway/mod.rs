//! Channel connectors: REST, websocket device groups and per-channel rendering.

mod http;
mod hub;
mod wire;

pub use http::{router, serve, AppState, ADMIN_HEADER};
pub use hub::{Clock, ConnId, FixedClock, Hub, HubConfig, HubError, SystemClock};
pub use wire::{
    BotResponsePayload, ConsentPayload, ErrorCode, ErrorPayload, IdentifyPayload, MessageType,
    SessionJoinPayload, SessionOpenPayload, UtterancePayload, WireError, WireMessage,
    PROTOCOL_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::response::ResponsePayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Webchat,
    Robot,
    Screen,
    Rest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub rich_cards: bool,
    pub display_only: bool,
    pub text: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDescriptor {
    pub channel_kind: ChannelKind,
    pub capabilities: Capabilities,
}

impl ChannelDescriptor {
    pub fn webchat() -> Self {
        Self::with(ChannelKind::Webchat, true, false)
    }

    /// Speech-only client; cards are spoken as flattened text.
    pub fn robot() -> Self {
        Self::with(ChannelKind::Robot, false, false)
    }

    /// External display paired with a robot; never takes user input.
    pub fn screen() -> Self {
        Self::with(ChannelKind::Screen, true, true)
    }

    pub fn rest() -> Self {
        Self::with(ChannelKind::Rest, false, false)
    }

    pub fn rest_with_cards(rich_cards: bool) -> Self {
        Self::with(ChannelKind::Rest, rich_cards, false)
    }

    pub fn for_kind(kind: ChannelKind) -> Self {
        match kind {
            ChannelKind::Webchat => Self::webchat(),
            ChannelKind::Robot => Self::robot(),
            ChannelKind::Screen => Self::screen(),
            ChannelKind::Rest => Self::rest(),
        }
    }

    fn with(channel_kind: ChannelKind, rich_cards: bool, display_only: bool) -> Self {
        Self {
            channel_kind,
            capabilities: Capabilities {
                rich_cards,
                display_only,
                text: true,
            },
        }
    }
}

/// Deterministic single-string rendering of any payload.
///
/// ItemCard: title, rating, price and body joined by em-dash separators; MapCard: `name at lat,lon: caption`;
/// ListCard: title then numbered lines; QuickReplies: `prompt [a | b]`.
pub fn flatten_text(payload: &ResponsePayload) -> String {
    match payload {
        ResponsePayload::Text { text } => text.clone(),
        ResponsePayload::ItemCard {
            title,
            rating,
            price,
            body,
            ..
        } => format!("{title} \u{2014} {rating:.1}\u{2605} \u{2014} {price} \u{2014} {body}"),
        ResponsePayload::MapCard {
            name,
            lat,
            lon,
            caption,
            ..
        } => {
            if caption.is_empty() {
                format!("{name} at {lat},{lon}")
            } else {
                format!("{name} at {lat},{lon}: {caption}")
            }
        }
        ResponsePayload::ListCard { title, entries } => {
            let mut out = title.clone();
            for (i, e) in entries.iter().enumerate() {
                out.push_str(&format!("\n{}. {e}", i + 1));
            }
            out
        }
        ResponsePayload::QuickReplies { prompt, options } => {
            format!("{prompt} [{}]", options.join(" | "))
        }
        ResponsePayload::IdentifyRequest { reason } => reason.clone(),
    }
}

/// Adapts a payload to what the channel can show.
pub fn render_for_channel(payload: &ResponsePayload, caps: &Capabilities) -> ResponsePayload {
    if caps.display_only {
        if let ResponsePayload::QuickReplies { prompt, .. } = payload {
            return ResponsePayload::text(prompt.clone());
        }
    }
    if caps.rich_cards || payload.is_text() {
        payload.clone()
    } else {
        ResponsePayload::text(flatten_text(payload))
    }
}
