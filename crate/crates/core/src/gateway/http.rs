//! HTTP surface: REST endpoints, the `/ws` socket and the `/chat` bundle.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use tracing::warn;

use super::hub::Hub;
use super::render_for_channel;
use super::wire::{ErrorCode, WireError};
use crate::response::ResponsePayload;

pub const ADMIN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    /// Shared secret for transcript access; transcripts are unavailable when unset.
    pub admin_token: Option<String>,
    /// Directory holding the web chat bundle served under `/chat`.
    pub web_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct MessageRequest {
    #[serde(default)]
    session: Option<String>,
    text: String,
}

#[derive(Debug, Serialize)]
struct MessageReply {
    session: String,
    responses: Vec<ResponsePayload>,
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    log_failures: u64,
    sessions: usize,
}

struct ApiError(StatusCode, WireError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let ApiError(status, err) = self;
        let mut resp = (status, Json(err.payload())).into_response();
        if let Some(ms) = err.retry_after_ms {
            let secs = ms.div_ceil(1000).to_string();
            if let Ok(v) = HeaderValue::from_str(&secs) {
                resp.headers_mut().insert(header::RETRY_AFTER, v);
            }
        }
        resp
    }
}

impl From<WireError> for ApiError {
    fn from(err: WireError) -> Self {
        let status = match err.code {
            ErrorCode::Capacity => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::UnknownSession => StatusCode::NOT_FOUND,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, err)
    }
}

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/api/message", post(message))
        .route("/api/health", get(health))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .route("/ws", get(ws_upgrade));
    app = match &state.web_dir {
        Some(dir) => app.nest_service(
            "/chat",
            ServeDir::new(dir).append_index_html_on_directories(true),
        ),
        None => app.route("/chat", get(no_chat_bundle)),
    };
    app.with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn message(
    State(state): State<AppState>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Json<MessageReply>, ApiError> {
    let Json(req) = body.map_err(|e| {
        ApiError(
            StatusCode::BAD_REQUEST,
            WireError::new(ErrorCode::Malformed, e.body_text()),
        )
    })?;
    let (session, responses) = state
        .hub
        .rest_message(req.session.as_deref(), &req.text)
        .await?;
    let caps = state.hub.config().rest_channel.capabilities;
    Ok(Json(MessageReply {
        session,
        responses: responses
            .iter()
            .map(|r| render_for_channel(&r.payload, &caps))
            .collect(),
    }))
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let log = state.hub.engine().log().health();
    Json(Health {
        status: if log.failures == 0 { "ok" } else { "degraded" },
        version: env!("CARGO_PKG_VERSION"),
        log_failures: log.failures,
        sessions: state.hub.session_count(),
    })
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(ADMIN_HEADER).and_then(|v| v.to_str().ok()) {
        return Some(v);
    }
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn transcript(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let Some(expected) = &state.admin_token else {
        return Err(ApiError(
            StatusCode::FORBIDDEN,
            WireError::new(
                ErrorCode::Internal,
                "transcript access is disabled (no admin token configured)",
            ),
        ));
    };
    if presented_token(&headers) != Some(expected.as_str()) {
        return Err(ApiError(
            StatusCode::UNAUTHORIZED,
            WireError::new(ErrorCode::Internal, "missing or wrong admin token"),
        ));
    }
    let records = state.hub.engine().log().transcript(&id).map_err(|e| {
        warn!(error = %e, "reading transcript failed");
        ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            WireError::new(ErrorCode::Internal, e.to_string()),
        )
    })?;
    if records.is_empty() && state.hub.inspect(&id, |_| ()).await.is_none() {
        return Err(
            WireError::new(ErrorCode::UnknownSession, format!("unknown session `{id}`")).into(),
        );
    }
    Ok(Json(records).into_response())
}

async fn no_chat_bundle() -> impl IntoResponse {
    (
        StatusCode::NOT_FOUND,
        "web chat bundle not configured (set web_dir)",
    )
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run_socket(state.hub, socket))
}

async fn run_socket(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (conn, mut rx) = hub.attach();
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            if sink
                .send(Message::Text(msg.to_text().into()))
                .await
                .is_err()
            {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        match frame {
            Message::Text(text) => hub.handle_text(conn, text.as_str()).await,
            Message::Binary(_) => hub.handle_text(conn, "").await,
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }
    hub.detach(conn).await;
    writer.abort();
}
