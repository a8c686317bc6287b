//! REST surface.
//!
//! ```text
//! POST /api/v1/publish/begin                             {api_key, model_slug, label, visibility?}
//! POST /api/v1/publish/{token}/manifest                  {metadata, files: [{path, digest, size}]}
//! POST /api/v1/publish/{token}/finalize
//! GET  /api/v1/models
//! GET  /api/v1/models/{slug}
//! GET  /api/v1/models/{slug}/docs
//! POST /api/v1/models/{slug}/versions/{id}/promote       {api_key} or `Authorization: Bearer`
//! POST /api/v1/models/{slug}/sessions                    {version?}
//! GET  /api/v1/sessions/{sid}
//! POST /api/v1/sessions/{sid}/steps/{k}                  {payloads}
//! POST /api/v1/sessions/{sid}/steps/{k}:rerun            {payloads}
//! POST /api/v1/models/{slug}/versions/{v}/steps/{k}:invoke {payloads, state_token?}
//! PUT  /blobs/staging/{scope}/{digest}?exp=&sig=         raw bytes
//! GET  /blobs/published/{digest}
//! ```
//!
//! Errors are `{code, message, details[]}` with a matching HTTP status.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::blob::{BlobDigest, BlobError, SignedUploadUrl};
use crate::metadata::generate_api_doc;
use crate::orchestrator::{OrchestratorError, StepResult, VersionSelector};
use crate::registry::{ManifestFile, RegistryError, Visibility};
use crate::service::Service;

/// Largest accepted request body (blob uploads included).
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Vec<Value>,
}

impl ApiError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            code: code.to_string(),
            message: message.into(),
            details: Vec::new(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(400, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let mut out = ApiError::new(e.http_status(), e.code(), e.to_string());
        out.details = e.details();
        out
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let mut out = ApiError::new(e.http_status(), e.code(), e.to_string());
        out.details = e.details();
        out
    }
}

impl From<BlobError> for ApiError {
    fn from(e: BlobError) -> Self {
        let (status, code) = match &e {
            BlobError::BadSignature => (403, "BadSignature"),
            BlobError::Expired => (403, "Expired"),
            BlobError::UnknownScope(_) | BlobError::InvalidScope(_) => (403, "UnknownScope"),
            BlobError::DigestMismatch { .. } => (409, "DigestMismatch"),
            BlobError::NotFound(_) | BlobError::MissingArtifact(_) => (404, "NotFound"),
            BlobError::Corrupted(_) | BlobError::Io(_) => (500, "StorageError"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(500, "InternalError", format!("request task failed: {e}")))?
}

type AppState = State<Arc<Service>>;

#[derive(Deserialize)]
struct BeginBody {
    api_key: String,
    model_slug: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    visibility: Option<Visibility>,
}

async fn publish_begin(State(svc): AppState, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: BeginBody = parse_body(&body)?;
    let resp = blocking(move || Ok(svc.registry.begin_publish(&b.api_key, &b.model_slug, &b.label, b.visibility)?)).await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

#[derive(Deserialize)]
struct ManifestBody {
    metadata: Value,
    files: Vec<ManifestFile>,
}

async fn publish_manifest(State(svc): AppState, Path(token): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: ManifestBody = parse_body(&body)?;
    let resp = blocking(move || Ok(svc.registry.submit_manifest(&token, &b.metadata, &b.files)?)).await?;
    Ok(Json(resp))
}

async fn publish_finalize(State(svc): AppState, Path(token): Path<String>) -> ApiResult<impl IntoResponse> {
    let record = blocking(move || Ok(svc.registry.finalize_publish(&token)?)).await?;
    Ok(Json(record))
}

async fn list_models(State(svc): AppState) -> ApiResult<impl IntoResponse> {
    let models = blocking(move || Ok(svc.registry.list_models()?)).await?;
    Ok(Json(json!({ "models": models })))
}

async fn get_model(State(svc): AppState, Path(slug): Path<String>) -> ApiResult<impl IntoResponse> {
    let detail = blocking(move || Ok(svc.registry.get_model(&slug)?)).await?;
    Ok(Json(detail))
}

#[derive(Deserialize)]
struct DocsQuery {
    version: Option<u64>,
}

async fn model_docs(
    State(svc): AppState,
    Path(slug): Path<String>,
    Query(q): Query<DocsQuery>,
) -> ApiResult<impl IntoResponse> {
    let doc = blocking(move || {
        let version = match q.version {
            Some(v) => v,
            None => svc
                .registry
                .model_record(&slug)?
                .live
                .ok_or_else(|| ApiError::from(OrchestratorError::NoLiveVersion(slug.clone())))?,
        };
        let meta = svc.registry.version_metadata(&slug, version)?;
        Ok(generate_api_doc(&meta))
    })
    .await?;
    Ok(Json(doc))
}

#[derive(Deserialize)]
struct PromoteBody {
    api_key: Option<String>,
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(|k| k.trim().to_string())
}

async fn promote(
    State(svc): AppState,
    Path((slug, version)): Path<(String, u64)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let b: PromoteBody = parse_body(&body)?;
    let key = b.api_key.or_else(|| bearer(&headers)).unwrap_or_default();
    let record = blocking(move || Ok(svc.registry.promote_version(&key, &slug, version)?)).await?;
    Ok(Json(record))
}

#[derive(Deserialize)]
struct CreateSessionBody {
    version: Option<u64>,
}

#[derive(Serialize)]
struct SessionCreated {
    session_id: String,
    model: String,
    version_id: u64,
    step_count: usize,
    step_result: StepResult,
}

async fn create_session(State(svc): AppState, Path(slug): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: CreateSessionBody = parse_body(&body)?;
    let selector = b.version.map_or(VersionSelector::Live, VersionSelector::Version);
    let session = blocking(move || Ok(svc.orchestrator.create_session(&slug, selector)?)).await?;
    let created = SessionCreated {
        session_id: session.session_id,
        model: session.model,
        version_id: session.version_id,
        step_count: session.step_count,
        step_result: session.results.into_iter().next().expect("handler 0 ran"),
    };
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(State(svc): AppState, Path(sid): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.orchestrator.session(&sid)?))
}

#[derive(Deserialize)]
struct StepBody {
    #[serde(default)]
    payloads: Vec<Value>,
    #[serde(default)]
    state_token: Option<String>,
}

/// Splits `"3"` or `"3:rerun"` into the index and the optional action.
fn step_and_action(raw: &str) -> ApiResult<(usize, Option<&str>)> {
    let (index, action) = match raw.split_once(':') {
        Some((i, a)) => (i, Some(a)),
        None => (raw, None),
    };
    let index = index
        .parse()
        .map_err(|_| ApiError::bad_request(format!("`{index}` is not a step index")))?;
    Ok((index, action))
}

async fn session_step(
    State(svc): AppState,
    Path((sid, raw)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let (step, action) = step_and_action(&raw)?;
    let rerun = match action {
        None => false,
        Some("rerun") => true,
        Some(other) => return Err(ApiError::new(404, "NotFound", format!("unknown step action `{other}`"))),
    };
    let b: StepBody = parse_body(&body)?;
    let result = blocking(move || {
        let r = if rerun {
            svc.orchestrator.rerun_step(&sid, step, b.payloads)
        } else {
            svc.orchestrator.submit_step(&sid, step, b.payloads)
        };
        Ok(r?)
    })
    .await?;
    Ok(Json(result))
}

async fn invoke_step(
    State(svc): AppState,
    Path((slug, version, raw)): Path<(String, u64, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let (step, action) = step_and_action(&raw)?;
    if action != Some("invoke") {
        return Err(ApiError::new(404, "NotFound", "expected `steps/{k}:invoke`"));
    }
    let b: StepBody = parse_body(&body)?;
    let result = blocking(move || {
        Ok(svc
            .orchestrator
            .invoke_direct(&slug, version, step, b.payloads, b.state_token.as_deref())?)
    })
    .await?;
    Ok(Json(result))
}

#[derive(Deserialize)]
struct UploadQuery {
    exp: i64,
    sig: String,
}

async fn put_blob(
    State(svc): AppState,
    Path((scope, digest)): Path<(String, String)>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let digest: BlobDigest = digest
        .parse()
        .map_err(|e| ApiError::bad_request(format!("invalid digest: {e}")))?;
    let url = SignedUploadUrl {
        scope,
        digest,
        exp: q.exp,
        sig: q.sig,
    };
    let stored = blocking(move || Ok(svc.blobs.receive_upload(&url, &body)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "digest": stored }))))
}

async fn get_blob(State(svc): AppState, Path(digest): Path<String>) -> ApiResult<impl IntoResponse> {
    let digest: BlobDigest = digest
        .parse()
        .map_err(|e| ApiError::bad_request(format!("invalid digest: {e}")))?;
    let bytes = blocking(move || Ok(svc.blobs.read_published(&digest)?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes))
}

async fn not_found() -> ApiError {
    ApiError::new(404, "NotFound", "no such endpoint")
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/v1/publish/begin", post(publish_begin))
        .route("/api/v1/publish/{token}/manifest", post(publish_manifest))
        .route("/api/v1/publish/{token}/finalize", post(publish_finalize))
        .route("/api/v1/models", get(list_models))
        .route("/api/v1/models/{slug}", get(get_model))
        .route("/api/v1/models/{slug}/docs", get(model_docs))
        .route("/api/v1/models/{slug}/versions/{version}/promote", post(promote))
        .route("/api/v1/models/{slug}/versions/{version}/steps/{step}", post(invoke_step))
        .route("/api/v1/models/{slug}/sessions", post(create_session))
        .route("/api/v1/sessions/{sid}", get(get_session))
        .route("/api/v1/sessions/{sid}/steps/{step}", post(session_step))
        .route("/blobs/staging/{scope}/{digest}", put(put_blob))
        .route("/blobs/published/{digest}", get(get_blob))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

/// Periodically expires stale publish tokens, staging areas and idle
/// sessions.
pub fn spawn_janitor(service: Arc<Service>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let svc = service.clone();
            let _ = tokio::task::spawn_blocking(move || {
                if let Err(e) = svc.registry.collect_expired() {
                    tracing::warn!("expiry sweep failed: {e}");
                }
                svc.orchestrator.collect_idle();
            })
            .await;
        }
    })
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    let janitor = spawn_janitor(service.clone(), Duration::from_secs(30));
    let result = axum::serve(listener, router(service)).await;
    janitor.abort();
    result
}

/// A server on an ephemeral local port, running on its own runtime thread.
/// Dropping it shuts the server down.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(service: Arc<Service>) -> std::io::Result<Self> {
        Self::start_on(std::net::TcpListener::bind("127.0.0.1:0")?, service)
    }

    /// Serves on an already bound listener, so the address can be known
    /// before the service is opened.
    pub fn start_on(std_listener: std::net::TcpListener, service: Arc<Service>) -> std::io::Result<Self> {
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("modelport-http".into())
            .spawn(move || {
                let rt = tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build()
                    .expect("tokio runtime");
                rt.block_on(async move {
                    let listener = TcpListener::from_std(std_listener).expect("listener");
                    let _ = axum::serve(listener, router(service))
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await;
                });
            })?;
        Ok(BackgroundServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
