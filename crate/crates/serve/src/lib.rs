//! HTTP sessions for interactive conditioning: upload a reference image, a
//! brush mask and strokes, then fetch condition files, preview frames and
//! metrics.
//!
//! Binary artifacts are returned as `{"files": [{"name", "data"}]}` with
//! base64 `data`, in the same order and with the same names the CLI writes.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use motionctl_core::grid::{BitMask2D, Grid};
use motionctl_core::io::{decode_mask_png, decode_png_rgb, RunLengthMask, TrajectoryFile};
use motionctl_core::metrics::MetricsReport;
use motionctl_core::pipeline::{infer_condition, oracle_metrics, run_preview, ConditionOutput, InferConfig, PreviewOutput};
use motionctl_core::tracks::Point;
use motionctl_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use uuid::Uuid;

pub const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Sessions idle for longer than this are dropped.
    pub ttl: Duration,
    /// Allowed CORS origin; any origin when `None`.
    pub cors_origin: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(30 * 60),
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileList {
    pub files: Vec<FileEntry>,
}

impl FileList {
    pub fn encode(files: &[(String, Vec<u8>)]) -> Self {
        Self {
            files: files
                .iter()
                .map(|(name, bytes)| FileEntry {
                    name: name.clone(),
                    data: STANDARD.encode(bytes),
                })
                .collect(),
        }
    }

    pub fn decode(&self) -> Result<Vec<(String, Vec<u8>)>, base64::DecodeError> {
        self.files
            .iter()
            .map(|f| Ok((f.name.clone(), STANDARD.decode(&f.data)?)))
            .collect()
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound,
    BadRequest { field: String, message: String },
    Conflict(String),
    Internal(String),
}

impl ApiError {
    fn bad(field: &str, message: impl Into<String>) -> Self {
        ApiError::BadRequest {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Format { field, message } => ApiError::BadRequest { field, message },
            Error::Shape(m) | Error::InvalidArgument(m) => ApiError::bad("payload", m),
            Error::UnconstrainedMotion => ApiError::Conflict(Error::UnconstrainedMotion.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({"error": "unknown session"})),
            ApiError::BadRequest { field, message } => {
                (StatusCode::BAD_REQUEST, json!({"error": message, "field": field}))
            }
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({"error": m})),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": m})),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Default)]
struct Derived {
    condition: Option<Arc<ConditionOutput>>,
    preview: Option<Arc<PreviewOutput>>,
}

struct Session {
    image: Option<Grid>,
    mask: Option<BitMask2D>,
    strokes: Vec<Vec<Point>>,
    config: InferConfig,
    derived: Derived,
}

impl Session {
    fn new() -> Self {
        Self {
            image: None,
            mask: None,
            strokes: Vec::new(),
            config: InferConfig::default(),
            derived: Derived::default(),
        }
    }

    fn invalidate(&mut self) {
        self.derived = Derived::default();
    }

    fn image(&self) -> ApiResult<&Grid> {
        self.image
            .as_ref()
            .ok_or_else(|| ApiError::Conflict("no reference image uploaded".into()))
    }

    fn condition(&mut self) -> ApiResult<Arc<ConditionOutput>> {
        if let Some(c) = &self.derived.condition {
            return Ok(c.clone());
        }
        let image = self.image()?;
        let mask = match &self.mask {
            Some(m) => m.clone(),
            None => BitMask2D::zeros(image.height(), image.width()),
        };
        let out = Arc::new(infer_condition(&self.strokes, self.config.frames, self.config.k, &mask)?);
        self.derived.condition = Some(out.clone());
        Ok(out)
    }

    fn preview(&mut self) -> ApiResult<Arc<PreviewOutput>> {
        if let Some(p) = &self.derived.preview {
            return Ok(p.clone());
        }
        let cond = self.condition()?;
        let out = Arc::new(run_preview(self.image()?, &cond.cond, &self.config.densify())?);
        self.derived.preview = Some(out.clone());
        Ok(out)
    }

    fn metrics(&mut self) -> ApiResult<MetricsReport> {
        let cond = self.condition()?;
        let preview = self.preview()?;
        Ok(oracle_metrics(&cond.tracks, &preview)?)
    }
}

struct Slot {
    session: Mutex<Session>,
    last_used: std::sync::Mutex<Instant>,
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, Arc<Slot>>>>,
    ttl: Duration,
}

impl AppState {
    pub fn new(ttl: Duration) -> Self {
        Self {
            sessions: Arc::new(RwLock::new(HashMap::new())),
            ttl,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map").len()
    }

    /// Drop sessions idle for longer than the TTL.
    pub fn evict_idle(&self) {
        let now = Instant::now();
        self.sessions
            .write()
            .expect("session map")
            .retain(|_, s| now.duration_since(*s.last_used.lock().expect("timestamp")) <= self.ttl);
    }

    fn create(&self) -> Uuid {
        self.evict_idle();
        let id = Uuid::new_v4();
        let slot = Arc::new(Slot {
            session: Mutex::new(Session::new()),
            last_used: std::sync::Mutex::new(Instant::now()),
        });
        self.sessions.write().expect("session map").insert(id, slot);
        id
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.evict_idle();
        let id = Uuid::parse_str(id).map_err(|_| ApiError::NotFound)?;
        let slot = self
            .sessions
            .read()
            .expect("session map")
            .get(&id)
            .cloned()
            .ok_or(ApiError::NotFound)?;
        *slot.last_used.lock().expect("timestamp") = Instant::now();
        Ok(slot)
    }

    fn remove(&self, id: &str) -> ApiResult<()> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::NotFound)?;
        self.sessions
            .write()
            .expect("session map")
            .remove(&id)
            .map(|_| ())
            .ok_or(ApiError::NotFound)
    }
}

async fn create_session(State(state): State<AppState>) -> impl IntoResponse {
    let id = state.create();
    (StatusCode::CREATED, Json(json!({"id": id.to_string()})))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn put_image(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let slot = state.slot(&id)?;
    let image = decode_png_rgb(&body).map_err(|e| ApiError::bad("image", e.to_string()))?;
    let mut s = slot.session.lock().await;
    let (h, w) = (image.height(), image.width());
    if s.mask.as_ref().is_some_and(|m| m.height() != h || m.width() != w) {
        s.mask = None;
    }
    s.image = Some(image);
    s.invalidate();
    Ok(Json(json!({"width": w, "height": h})))
}

fn is_json(headers: &HeaderMap, body: &[u8]) -> bool {
    let declared = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    declared || body.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{')
}

async fn put_mask(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let slot = state.slot(&id)?;
    let mask = if is_json(&headers, &body) {
        RunLengthMask::parse(&body).and_then(|r| r.to_mask())
    } else {
        decode_mask_png(&body)
    }
    .map_err(|e| ApiError::bad("mask", e.to_string()))?;
    let mut s = slot.session.lock().await;
    let image = s.image()?;
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(ApiError::bad(
            "mask",
            format!("{}x{} mask does not match the {}x{} image", mask.width(), mask.height(), image.width(), image.height()),
        ));
    }
    let count = mask.count_ones();
    s.mask = Some(mask);
    s.invalidate();
    Ok(Json(json!({"pixels": count})))
}

async fn put_strokes(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let slot = state.slot(&id)?;
    let file = TrajectoryFile::parse(&body)?;
    let mut s = slot.session.lock().await;
    s.strokes = file.strokes();
    s.invalidate();
    Ok(Json(json!({"strokes": s.strokes.len()})))
}

async fn put_config(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<InferConfig>> {
    let slot = state.slot(&id)?;
    let cfg = InferConfig::parse(&body)?;
    let mut s = slot.session.lock().await;
    s.config = cfg;
    s.invalidate();
    Ok(Json(cfg))
}

fn file_list(files: motionctl_core::Result<Vec<(String, Vec<u8>)>>) -> ApiResult<Json<FileList>> {
    Ok(Json(FileList::encode(&files?)))
}

async fn get_condition(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FileList>> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    file_list(s.condition()?.files())
}

async fn get_preview(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FileList>> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    file_list(s.preview()?.files(false))
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    let report = s.metrics()?;
    Ok(([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response())
}

pub fn router(state: AppState, cfg: &ServeConfig) -> Router {
    let origin = match cfg.cors_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(v)) => AllowOrigin::exact(v),
        _ => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", delete(delete_session))
        .route("/session/{id}/image", post(put_image))
        .route("/session/{id}/mask", put(put_mask))
        .route("/session/{id}/strokes", put(put_strokes))
        .route("/session/{id}/config", put(put_config))
        .route("/session/{id}/condition", get(get_condition))
        .route("/session/{id}/preview", get(get_preview))
        .route("/session/{id}/metrics", get(get_metrics))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

/// Serve on a bound listener until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, cfg: ServeConfig) -> std::io::Result<()> {
    let state = AppState::new(cfg.ttl);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(30));
        loop {
            tick.tick().await;
            sweeper.evict_idle();
        }
    });
    axum::serve(listener, router(state, &cfg)).await
}
