//! Drives the REST API in-process: health, a short conversation and the
//! admin-gated transcript.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use concierge::assistant::seed_engine;
use concierge::gateway::{router, AppState, FixedClock, Hub, HubConfig, ADMIN_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, req: Request<Body>) -> (u16, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn post(text: &str, session: Option<&str>) -> Request<Body> {
    let body = json!({"session": session, "text": text});
    Request::post("/api/message")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clock = Arc::new(FixedClock::new("2022-04-11T08:00:00Z".parse()?));
    let app = router(AppState {
        hub: Arc::new(Hub::with_clock(
            Arc::new(seed_engine()),
            HubConfig::default(),
            clock,
        )),
        admin_token: Some("secret".into()),
        web_dir: None,
    });

    let (status, health) = call(&app, Request::get("/api/health").body(Body::empty())?).await;
    println!("GET /api/health -> {status} {health}");

    let mut session: Option<String> = None;
    for line in [
        "Hi",
        "who are the keynote speakers",
        "what is the next session",
        "recommend a session",
        "ranking",
    ] {
        let (status, reply) = call(&app, post(line, session.as_deref())).await;
        session = reply["session"].as_str().map(String::from);
        println!("POST {line:?} -> {status}");
        for r in reply["responses"].as_array().into_iter().flatten() {
            println!("  {r}");
        }
    }

    let id = session.unwrap();
    let uri = format!("/api/sessions/{id}/transcript");
    let (status, _) = call(&app, Request::get(&uri).body(Body::empty())?).await;
    println!("GET transcript without token -> {status}");
    let (status, records) = call(
        &app,
        Request::get(&uri)
            .header(ADMIN_HEADER, "secret")
            .body(Body::empty())?,
    )
    .await;
    println!(
        "GET transcript with token -> {status}, {} records",
        records.as_array().map_or(0, Vec::len)
    );
    Ok(())
}
