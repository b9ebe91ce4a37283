//! A conversational conference assistant.
//!
//! Utterances are classified by a deterministic intent model ([`nlu`]), routed
//! by a rule-and-form dialogue manager ([`dialogue`]) to skills ([`skills`],
//! [`skill_poi`], [`skill_conference`]) and delivered over REST or websocket
//! device groups ([`gateway`]). Users may identify and opt in to memory
//! ([`profile`]); every turn is logged for analytics ([`logstore`]).

pub mod admin;
pub mod assistant;
pub mod config;
pub mod dialogue;
pub mod gateway;
pub mod logstore;
pub mod nlu;
pub mod profile;
pub mod response;
pub mod skill_conference;
pub mod skill_poi;
pub mod skills;

pub use assistant::{seed_engine, AssistantData, AssistantError};
pub use config::Config;
pub use dialogue::{DialogueEngine, Session};
pub use gateway::{ChannelDescriptor, ChannelKind, Hub};
pub use response::{Response, ResponsePayload};
