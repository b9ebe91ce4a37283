#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Utc};
use concierge::assistant::{AssistantData, POI_SMALL};
use concierge::gateway::{router, AppState, FixedClock, Hub, HubConfig};
use concierge::logstore::LogStore;
use concierge::nlu::DEFAULT_THRESHOLD;
use concierge::profile::ProfileStore;
use concierge::skill_poi::load_catalog;
use concierge::DialogueEngine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ADMIN_TOKEN: &str = "test-admin";

/// Morning of the first conference day in the shipped programme.
pub fn conference_morning() -> DateTime<Utc> {
    "2022-04-11T08:00:00Z".parse().unwrap()
}

pub fn small_data() -> AssistantData {
    AssistantData::seed().with_catalog(load_catalog(POI_SMALL).unwrap())
}

pub fn engine_with(
    data: &AssistantData,
    profiles: Arc<ProfileStore>,
    log: Arc<LogStore>,
) -> DialogueEngine {
    data.build_engine(DEFAULT_THRESHOLD, profiles, log).unwrap()
}

pub fn small_engine() -> DialogueEngine {
    engine_with(
        &small_data(),
        Arc::new(ProfileStore::in_memory()),
        Arc::new(LogStore::in_memory()),
    )
}

/// Engine over the small catalog whose stores live in `dir`.
pub fn small_engine_in(dir: &Path) -> DialogueEngine {
    engine_with(
        &small_data(),
        Arc::new(ProfileStore::open(dir).unwrap()),
        Arc::new(LogStore::open(dir).unwrap()),
    )
}

pub fn state_for(engine: DialogueEngine, config: HubConfig) -> AppState {
    AppState {
        hub: Arc::new(Hub::with_clock(
            Arc::new(engine),
            config,
            Arc::new(FixedClock::new(conference_morning())),
        )),
        admin_token: Some(ADMIN_TOKEN.to_string()),
        web_dir: None,
    }
}

pub fn small_app() -> Router {
    router(state_for(small_engine(), HubConfig::default()))
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, body)
}

pub async fn post_message(app: &Router, session: Option<&str>, text: &str) -> (StatusCode, Value) {
    let body = match session {
        Some(s) => json!({"session": s, "text": text}),
        None => json!({"text": text}),
    };
    let req = Request::post("/api/message")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

/// Posts every line into one session and returns the session id and the replies.
pub async fn converse(app: &Router, lines: &[&str]) -> (String, Vec<Vec<Value>>) {
    let mut session: Option<String> = None;
    let mut replies = Vec::new();
    for line in lines {
        let (status, body) = post_message(app, session.as_deref(), line).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        session = Some(body["session"].as_str().unwrap().to_string());
        replies.push(body["responses"].as_array().unwrap().clone());
    }
    (session.unwrap_or_default(), replies)
}

/// Scripted conversations exercising every skill.
pub fn demo_dialogues() -> Vec<Vec<String>> {
    serde_json::from_str(include_str!("../data/demo_dialogues.json")).unwrap()
}

/// Paraphrases never used as training examples. The numbered sets were
/// consulted while the corpus was written; the blind set was not.
pub fn heldout() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(include_str!("../data/heldout.json")).unwrap()
}

pub fn heldout_2() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(include_str!("../data/heldout_2.json")).unwrap()
}

pub fn heldout_blind() -> BTreeMap<String, Vec<String>> {
    serde_json::from_str(include_str!("../data/heldout_blind.json")).unwrap()
}
