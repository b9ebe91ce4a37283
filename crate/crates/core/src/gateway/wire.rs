//! Versioned JSON message protocol spoken over `/ws`.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ChannelKind;
use crate::profile::Consent;
use crate::response::ResponsePayload;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    SessionOpen,
    SessionJoin,
    UserUtterance,
    BotResponse,
    Identify,
    Consent,
    Error,
    Ping,
    Pong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub v: u64,
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default)]
    pub session: String,
    #[serde(default)]
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    VersionMismatch,
    UnknownSession,
    UnknownGroup,
    GroupFull,
    Capacity,
    OutOfOrder,
    NotInSession,
    AlreadyInSession,
    DisplayOnly,
    UnexpectedType,
    ConsentNotRequested,
    ConsentAlreadyAnswered,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_after_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireError {
    pub code: ErrorCode,
    pub message: String,
    pub retry_after_ms: Option<u64>,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retry_after_ms: None,
        }
    }

    pub fn payload(&self) -> ErrorPayload {
        ErrorPayload {
            code: self.code,
            message: self.message.clone(),
            retry_after_ms: self.retry_after_ms,
        }
    }
}

impl std::fmt::Display for WireError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for WireError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOpenPayload {
    pub channel: ChannelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionJoinPayload {
    pub group_token: String,
    pub channel: ChannelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyPayload {
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentPayload {
    pub decision: Consent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotResponsePayload {
    pub turn: u32,
    pub skill: String,
    pub response: ResponsePayload,
}

impl WireMessage {
    pub fn new(
        kind: MessageType,
        session: impl Into<String>,
        seq: u64,
        payload: impl Serialize,
    ) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind,
            session: session.into(),
            seq,
            payload: serde_json::to_value(payload).unwrap_or(Value::Null),
        }
    }

    pub fn error(session: impl Into<String>, seq: u64, err: &WireError) -> Self {
        Self::new(MessageType::Error, session, seq, err.payload())
    }

    /// Validates envelope then type, so clients get the most specific error code.
    pub fn parse(text: &str) -> Result<Self, WireError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| WireError::new(ErrorCode::Malformed, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| WireError::new(ErrorCode::Malformed, "message must be a JSON object"))?;
        let v = obj
            .get("v")
            .and_then(Value::as_u64)
            .ok_or_else(|| WireError::new(ErrorCode::Malformed, "missing integer field `v`"))?;
        if v != PROTOCOL_VERSION {
            return Err(WireError::new(
                ErrorCode::VersionMismatch,
                format!("protocol version {v} unsupported, expected {PROTOCOL_VERSION}"),
            ));
        }
        let kind = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| WireError::new(ErrorCode::Malformed, "missing string field `type`"))?;
        if serde_json::from_value::<MessageType>(Value::String(kind.to_string())).is_err() {
            return Err(WireError::new(
                ErrorCode::UnknownType,
                format!("unknown message type `{kind}`"),
            ));
        }
        serde_json::from_value(value)
            .map_err(|e| WireError::new(ErrorCode::Malformed, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, WireError> {
        serde_json::from_value(self.payload.clone()).map_err(|e| {
            WireError::new(
                ErrorCode::Malformed,
                format!("invalid {:?} payload: {e}", self.kind),
            )
        })
    }
}
