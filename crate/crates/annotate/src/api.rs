//! JSON-over-HTTP front end of the store.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::annotation::AnnotationRecord;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::store::{Store, StoreError};
use crate::{GUIDELINE, SCHEMA};

pub type Shared = Arc<Mutex<Store>>;

struct ApiError(StatusCode, String, String);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, kind) = match &e {
            StoreError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            StoreError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            StoreError::NotAssigned { .. } => (StatusCode::FORBIDDEN, "not_assigned"),
            StoreError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            StoreError::NoDuplicates => (StatusCode::NOT_FOUND, "no_duplicates"),
            StoreError::Corrupt { .. } | StoreError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError(status, kind.to_string(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "schema": SCHEMA, "error": { "kind": self.1, "message": self.2 } });
        (self.0, Json(body)).into_response()
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, "bad_request".into(), message.into())
}

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, Store> {
    // A panic while holding the lock leaves the in-memory state at the last
    // applied event, which is still consistent with the log.
    state.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct TaskQuery {
    annotator: Option<String>,
}

async fn next_task(State(state): State<Shared>, Query(q): Query<TaskQuery>) -> Result<Json<Value>, ApiError> {
    let annotator = q.annotator.filter(|a| !a.trim().is_empty()).ok_or_else(|| bad_request("missing annotator parameter"))?;
    let task = lock(&state).next_task(&annotator)?;
    Ok(Json(json!({ "schema": SCHEMA, "task": task })))
}

#[derive(Deserialize)]
struct SubmitBody {
    schema: String,
    record: AnnotationRecord,
}

async fn submit(State(state): State<Shared>, body: Result<Json<SubmitBody>, JsonRejection>) -> Result<Json<Value>, ApiError> {
    let Json(body) = body.map_err(|e| bad_request(e.body_text()))?;
    if body.schema != SCHEMA {
        return Err(bad_request(format!("unsupported schema {:?}, expected {SCHEMA}", body.schema)));
    }
    let task_id = body.record.task_id.clone();
    let hash = lock(&state).submit(body.record)?;
    Ok(Json(json!({ "schema": SCHEMA, "status": "accepted", "task_id": task_id, "record_hash": hash })))
}

async fn export(State(state): State<Shared>) -> Json<Value> {
    Json(serde_json::to_value(lock(&state).export()).expect("export serializes"))
}

async fn agreement(State(state): State<Shared>) -> Result<Json<Value>, ApiError> {
    let report = lock(&state).agreement()?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn guideline() -> Json<Value> {
    Json(json!({ "schema": SCHEMA, "text": GUIDELINE }))
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/api/task", get(next_task))
        .route("/api/submit", post(submit))
        .route("/api/export", get(export))
        .route("/api/agreement", get(agreement))
        .route("/api/guideline", get(guideline))
        .with_state(store)
}

pub async fn serve(addr: SocketAddr, store: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
