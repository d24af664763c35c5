//! HTTP annotation service.
//!
//! Routes:
//!
//! | method | path                      | success            | errors                 |
//! |--------|---------------------------|--------------------|------------------------|
//! | GET    | `/api/tasks/next?annotator=` | 200 task, 204 none | 404 unknown annotator |
//! | POST   | `/api/annotations`        | 201 receipt        | 400 validation, 403, 404 |
//! | GET    | `/api/progress?team=`     | 200 progress       | 404                    |
//! | POST   | `/api/admin/assign`       | 201 assignment     | 409, 404               |
//! | POST   | `/api/admin/annotators`   | 201 annotator      | 409                    |
//!
//! Error bodies are `{"code": str, "detail": str}`. Writes go through the store's
//! write lock on a blocking thread, so appends are serialized and readers see the
//! state as of the last completed write.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use dialrel_core::store::{Annotation, AnnotationStore, StoreError};
use dialrel_core::{LabelSet, RelationLabel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub type SharedStore = Arc<RwLock<AnnotationStore>>;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Directory of static UI assets served for every non-API path.
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                detail: detail.into(),
            },
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownDialogue(_)
            | StoreError::UnknownAnnotator(_)
            | StoreError::UnknownTask(_)
            | StoreError::NotAssigned(_) => StatusCode::NOT_FOUND,
            StoreError::AlreadyAssigned { .. } | StoreError::AnnotatorConflict { .. } => StatusCode::CONFLICT,
            StoreError::WrongTeam { .. } => StatusCode::FORBIDDEN,
            StoreError::InvalidLabels | StoreError::RejectedWithLabels | StoreError::ConfidenceRange(_) => {
                StatusCode::BAD_REQUEST
            }
            StoreError::CorruptLog { .. } | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))
}

fn poisoned() -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "store lock poisoned")
}

/// Runs a mutation on a blocking thread under the write lock.
async fn write<T, F>(store: SharedStore, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut AnnotationStore) -> Result<T, StoreError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut guard = store.write().map_err(|_| poisoned())?;
        f(&mut guard).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_task(State(store): State<SharedStore>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let guard = store.read().map_err(|_| poisoned())?;
    Ok(match guard.next_task(&q.annotator)? {
        Some(task) => (StatusCode::OK, Json(task)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub task_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub confidence: Option<u8>,
    #[serde(default)]
    pub rejected: bool,
}

async fn post_annotation(State(store): State<SharedStore>, body: Bytes) -> ApiResult<Response> {
    let req: AnnotationRequest = parse_body(&body)?;
    let labels = req
        .labels
        .iter()
        .map(|l| l.parse::<RelationLabel>())
        .collect::<Result<LabelSet, _>>()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "unknown_label", e.to_string()))?;
    let annotation = Annotation {
        task_id: req.task_id,
        annotator_id: req.annotator_id,
        labels,
        confidence: req.confidence,
        rejected: req.rejected,
        ts: Utc::now(),
    };
    let receipt = write(store, move |s| s.record_annotation(annotation)).await?;
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

#[derive(Deserialize)]
struct ProgressQuery {
    team: String,
}

async fn progress(State(store): State<SharedStore>, Query(q): Query<ProgressQuery>) -> ApiResult<Response> {
    let guard = store.read().map_err(|_| poisoned())?;
    Ok(Json(guard.progress(&q.team)?).into_response())
}

#[derive(Deserialize)]
struct AssignRequest {
    team_id: String,
    dialogue_id: String,
}

async fn assign(State(store): State<SharedStore>, body: Bytes) -> ApiResult<Response> {
    let req: AssignRequest = parse_body(&body)?;
    let assignment = write(store, move |s| s.assign_team(&req.team_id, &req.dialogue_id)).await?;
    Ok((StatusCode::CREATED, Json(assignment)).into_response())
}

#[derive(Deserialize)]
struct AnnotatorRequest {
    annotator_id: String,
    team_id: String,
}

async fn register(State(store): State<SharedStore>, body: Bytes) -> ApiResult<Response> {
    let req: AnnotatorRequest = parse_body(&body)?;
    let annotator = write(store, move |s| s.register_annotator(&req.annotator_id, &req.team_id)).await?;
    Ok((StatusCode::CREATED, Json(annotator)).into_response())
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(store: SharedStore, config: &ServerConfig) -> Router {
    let api = Router::new()
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(post_annotation))
        .route("/progress", get(progress))
        .route("/admin/assign", post(assign))
        .route("/admin/annotators", post(register))
        .fallback(api_not_found)
        .with_state(store);
    let app = Router::new().nest("/api", api);
    match &config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: SharedStore, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store, &config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
