//! JSON API over an [`Engine`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | `{user_id}` | `{session_id, greeting}` |
//! | POST | `/sessions/{id}/turns` | `{text}` | `{response, source, session_ended}`, plus `trace` with `?debug=1` |
//! | DELETE | `/sessions/{id}` | | session summary |
//! | GET | `/metrics` | | metrics report; `?format=text` for the table, `?window=N` for the last N turns |

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::engine::{Engine, TurnTrace};
use super::ServiceError;

/// What the service says on the user's behalf to open a session.
pub const OPENING_TEXT: &str = "let's chat";

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub user_id: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub greeting: String,
}

#[derive(Debug, Deserialize)]
pub struct TurnBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TurnReply {
    pub response: String,
    pub source: String,
    pub session_ended: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TurnTrace>,
}

#[derive(Debug, Default, Deserialize)]
pub struct DebugQuery {
    #[serde(default)]
    pub debug: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct MetricsQuery {
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub format: Option<String>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::DuplicateSession(_) | ServiceError::SessionEnded(_) => StatusCode::CONFLICT,
            ServiceError::EmptyText | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Config(_) | ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/turns", post(turn))
        .route("/sessions/{id}", delete(end))
        .route("/metrics", get(metrics))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(engine)
}

async fn create(
    State(engine): State<Arc<Engine>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    if body.user_id.trim().is_empty() {
        return Err(ServiceError::BadRequest("user_id is empty".into()).into());
    }
    let id = engine.create_session(&body.user_id, body.session_id.as_deref()).await?;
    let out = engine.handle_turn(&id, OPENING_TEXT).await?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: id,
            greeting: out.response,
        }),
    ))
}

async fn turn(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<DebugQuery>,
    Json(body): Json<TurnBody>,
) -> Result<Json<TurnReply>, ApiError> {
    let out = engine.handle_turn(&id, &body.text).await?;
    let debug = matches!(q.debug.as_deref(), Some("1" | "true" | ""));
    Ok(Json(TurnReply {
        response: out.response,
        source: out.source,
        session_ended: out.session_ended,
        trace: debug.then_some(out.trace),
    }))
}

async fn end(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(engine.end_session(&id).await?).into_response())
}

async fn metrics(State(engine): State<Arc<Engine>>, Query(q): Query<MetricsQuery>) -> Response {
    let report = engine.metrics_report(q.window);
    if q.format.as_deref() == Some("text") {
        report.to_table().into_response()
    } else {
        Json(report).into_response()
    }
}

/// Binds `addr` and serves until the task is cancelled.
pub async fn serve(engine: Arc<Engine>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(engine)).await
}
