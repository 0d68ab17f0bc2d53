//! HTTP + JSON front end for a [`Store`].
//!
//! Every error body is `{"code": "...", "message": "..."}`.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

use super::*;
use crate::probing::Subset;

pub struct AppState {
    pub store: RwLock<Store>,
    pub media_root: Option<PathBuf>,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(store: Store, media_root: Option<PathBuf>) -> SharedState {
        Arc::new(Self {
            store: RwLock::new(store),
            media_root,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        let status = match &e {
            AnnotateError::EmptyBatch | AnnotateError::BadItem { .. } | AnnotateError::InvalidVerdict(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AnnotateError::UnknownTask(_) | AnnotateError::UnknownBatch(_) | AnnotateError::EmptyFilter => {
                StatusCode::NOT_FOUND
            }
            AnnotateError::BatchConflict(_) | AnnotateError::WrongKind { .. } | AnnotateError::Incomplete { .. } => {
                StatusCode::CONFLICT
            }
            AnnotateError::CorruptLog { .. } | AnnotateError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Bootstrap data for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub version: String,
    pub kinds: Vec<TaskKind>,
    pub media_base: Option<String>,
    pub rating_min: u8,
    pub rating_max: u8,
    pub adequacy: Vec<Scale>,
    pub fluency: Vec<Scale>,
    pub image_need: Vec<ImageNeed>,
    pub subsets: Vec<Subset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateBatch {
    pub kind: TaskKind,
    pub items: Vec<serde_json::Value>,
    #[serde(default)]
    pub key: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextQuery {
    pub kind: TaskKind,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTask {
    pub task: Option<AnnotationTask>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QualityQuery {
    #[serde(default)]
    pub subset: Option<Subset>,
    #[serde(default)]
    pub language: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaturalnessQuery {
    pub batch: String,
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/config", get(config))
        .route("/batches", post(create_batch).get(list_batches))
        .route("/batches/{key}", get(get_batch))
        .route("/batches/{key}/close", post(close_batch))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}", get(get_task))
        .route("/verdicts", post(submit_verdict))
        .route("/reports/quality", get(quality_report))
        .route("/reports/naturalness", get(naturalness_report))
        .route("/media/{image_id}", get(media))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

async fn config(State(s): State<SharedState>) -> Json<ClientConfig> {
    Json(ClientConfig {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kinds: vec![TaskKind::Naturalness, TaskKind::Quality],
        media_base: s.media_root.as_ref().map(|_| "/media/".to_string()),
        rating_min: 1,
        rating_max: 5,
        adequacy: Scale::ALL.to_vec(),
        fluency: Scale::ALL.to_vec(),
        image_need: ImageNeed::ALL.to_vec(),
        subsets: vec![Subset::Test, Subset::Challenge],
    })
}

async fn create_batch(
    State(s): State<SharedState>,
    body: std::result::Result<Json<CreateBatch>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BatchReceipt>)> {
    let Json(req) = body?;
    let receipt = s.store.write().await.create_batch_json(req.kind, req.items, req.key)?;
    let status = if receipt.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(receipt)))
}

async fn list_batches(State(s): State<SharedState>) -> Json<Vec<BatchInfo>> {
    Json(s.store.read().await.index().batches())
}

async fn get_batch(State(s): State<SharedState>, UrlPath(key): UrlPath<String>) -> ApiResult<Json<BatchInfo>> {
    let store = s.store.read().await;
    store
        .index()
        .batch(&key)
        .map(Json)
        .ok_or_else(|| AnnotateError::UnknownBatch(key).into())
}

async fn close_batch(State(s): State<SharedState>, UrlPath(key): UrlPath<String>) -> ApiResult<Json<BatchInfo>> {
    Ok(Json(s.store.write().await.close_batch(&key)?))
}

async fn next_task(
    State(s): State<SharedState>,
    q: std::result::Result<Query<NextQuery>, QueryRejection>,
) -> ApiResult<Json<NextTask>> {
    let Query(q) = q?;
    if q.annotator.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "annotator is empty"));
    }
    let task = s.store.read().await.index().next_task(q.kind, &q.annotator);
    Ok(Json(NextTask { task }))
}

async fn get_task(State(s): State<SharedState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<AnnotationTask>> {
    let store = s.store.read().await;
    store
        .index()
        .task(&id)
        .map(Json)
        .ok_or_else(|| AnnotateError::UnknownTask(id).into())
}

async fn submit_verdict(
    State(s): State<SharedState>,
    body: std::result::Result<Json<VerdictRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<VerdictReceipt>)> {
    let Json(req) = body?;
    let receipt = s.store.write().await.submit_verdict(req)?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn quality_report(
    State(s): State<SharedState>,
    q: std::result::Result<Query<QualityQuery>, QueryRejection>,
) -> ApiResult<Json<QualityReport>> {
    let Query(q) = q?;
    let language = q.language.as_deref().filter(|l| !l.is_empty());
    Ok(Json(s.store.read().await.index().aggregate_quality(q.subset, language)?))
}

async fn naturalness_report(
    State(s): State<SharedState>,
    q: std::result::Result<Query<NaturalnessQuery>, QueryRejection>,
) -> ApiResult<Json<NaturalnessReport>> {
    let Query(q) = q?;
    Ok(Json(s.store.read().await.index().aggregate_naturalness(&q.batch)?))
}

/// `image_id` must be a single plain file name; `.jpg`, `.jpeg` and `.png`
/// are tried when it has no extension of its own.
pub fn resolve_media(root: &Path, image_id: &str) -> Option<PathBuf> {
    let mut parts = Path::new(image_id).components();
    let ok = matches!(parts.next(), Some(Component::Normal(_)))
        && parts.next().is_none()
        && !image_id.starts_with('.')
        && !image_id.contains(['/', '\\']);
    if !ok {
        return None;
    }
    let direct = root.join(image_id);
    if direct.is_file() {
        return Some(direct);
    }
    ["jpg", "jpeg", "png"]
        .iter()
        .map(|ext| root.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn media(State(s): State<SharedState>, UrlPath(image_id): UrlPath<String>) -> ApiResult<Response> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "media_not_found", format!("no image `{image_id}`"));
    let root = s.media_root.as_ref().ok_or_else(not_found)?;
    let path = resolve_media(root, &image_id).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

/// Serves until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: SharedState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn media_paths_are_confined() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("42.jpg"), b"x").unwrap();
        assert_eq!(resolve_media(dir.path(), "42"), Some(dir.path().join("42.jpg")));
        assert_eq!(resolve_media(dir.path(), "42.jpg"), Some(dir.path().join("42.jpg")));
        for bad in ["../42.jpg", "..", "/etc/passwd", "a/42.jpg", ".hidden", "a\\b", ""] {
            assert_eq!(resolve_media(dir.path(), bad), None, "{bad}");
        }
        assert_eq!(resolve_media(dir.path(), "43"), None);
    }
}
