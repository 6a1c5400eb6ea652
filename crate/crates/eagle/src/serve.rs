//! Local HTTP service behind the explorer UI.
//!
//! ```text
//! GET  /api/health                 -> {"status": "ok"}
//! POST /api/session                {image_b64 | image_path, prompt?} -> session with generated tokens
//! GET  /api/session/{id}/partition -> partition labels
//! POST /api/attribute              {session, positions?} -> 202 {bundle}
//! GET  /api/bundle/{id}            -> {status: pending | done | failed, bundle?, error?}
//! GET  /api/saliency/{id}.png      -> grayscale saliency
//! POST /api/whatif                 {session, removed_region_ids, positions?} -> probabilities and regenerated text
//! ```
//!
//! Attribution jobs run on a bounded pool; what-if requests run immediately.
//! Anything else is served from the static asset directory when one is set.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Component, Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use eagle_core::{
    Generation, Image, KeepSet, ProbOracle, ProbQuery, RegionPartition, Scene, TokenTargets,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::config::RunConfig;
use crate::error::Error;
use crate::formats::PartitionFile;
use crate::gateway::Gateway;
use crate::imaging::{load_image, saliency_png};
use crate::pipeline::{
    attribute_prepared, generate_caption, partition_image, write_attribution, OracleGateway,
    OracleSource, TargetRequest,
};
use crate::protocol::image_from_b64;
use crate::targets::TargetSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeOptions {
    pub static_dir: Option<PathBuf>,
    /// Attribution jobs running at once.
    pub job_workers: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            static_dir: None,
            job_workers: 2,
        }
    }
}

struct Session {
    image: Image,
    partition: RegionPartition,
    oracle: Arc<OracleGateway>,
    prompt: String,
    generation: Generation,
}

#[derive(Clone)]
enum Job {
    Pending,
    Done {
        bundle: Arc<Value>,
        saliency_png: Arc<Vec<u8>>,
    },
    Failed(String),
}

pub struct ServeState {
    config: RunConfig,
    source: OracleSource,
    options: ServeOptions,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    jobs: Mutex<HashMap<String, Job>>,
    permits: Arc<Semaphore>,
    next_id: AtomicU64,
}

impl ServeState {
    pub fn new(config: RunConfig, source: OracleSource, options: ServeOptions) -> Arc<Self> {
        let permits = Arc::new(Semaphore::new(options.job_workers.max(1)));
        Arc::new(Self {
            config,
            source,
            options,
            sessions: Mutex::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
            permits,
            next_id: AtomicU64::new(1),
        })
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!(
            "{prefix}{:06}",
            self.next_id.fetch_add(1, Ordering::Relaxed)
        )
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .lock()
            .expect("session lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }

    fn job(&self, id: &str) -> Result<Job, ApiError> {
        self.jobs
            .lock()
            .expect("job lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown bundle {id:?}")))
    }

    fn set_job(&self, id: &str, job: Job) {
        self.jobs
            .lock()
            .expect("job lock")
            .insert(id.to_string(), job);
    }
}

/// JSON error `{error}` with a status code; oracle failures map to 502.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }

    fn bad_request(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = if e.is_oracle() {
            StatusCode::BAD_GATEWAY
        } else if matches!(e, Error::Io { .. }) {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::BAD_REQUEST
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<eagle_core::Error> for ApiError {
    fn from(e: eagle_core::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<eagle_core::OracleError> for ApiError {
    fn from(e: eagle_core::OracleError) -> Self {
        Error::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: format!("worker failed: {e}"),
    })?
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    #[serde(default)]
    pub image_b64: Option<String>,
    #[serde(default)]
    pub image_path: Option<PathBuf>,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session: String,
    pub width: usize,
    pub height: usize,
    pub region_count: usize,
    pub prompt: String,
    pub text: String,
    pub token_ids: Vec<u32>,
    /// `[start, end)` character offsets of each token, when the tokenizer aligns.
    pub offsets: Option<Vec<[usize; 2]>>,
}

async fn create_session(
    State(state): State<Arc<ServeState>>,
    Json(req): Json<SessionRequest>,
) -> Result<Json<SessionResponse>, ApiError> {
    blocking(move || {
        let image = match (&req.image_b64, &req.image_path) {
            (Some(b64), None) => image_from_b64(b64)?,
            (None, Some(path)) => load_image(path)?,
            _ => {
                return Err(ApiError::bad_request(
                    "give exactly one of image_b64 or image_path".into(),
                ))
            }
        };
        let config = &state.config;
        let partition = partition_image(config, &image)?;
        let oracle = Arc::new(Gateway::new(
            state.source.connect(&partition, config.fill)?,
            config.oracle.gateway(),
        ));
        let prompt = req
            .prompt
            .clone()
            .unwrap_or_else(|| config.caption_prompt.clone());
        let scene = Scene::new(&image, &partition, config.fill)?;
        let generation = generate_caption(oracle.as_ref(), scene, &prompt, config.max_new_tokens)?;
        let offsets = state
            .source
            .tokenizer()
            .tokenize(&generation.text)
            .ok()
            .map(|t| t.offsets)
            .filter(|o| o.len() == generation.token_ids.len());
        let id = state.fresh_id("s");
        let response = SessionResponse {
            session: id.clone(),
            width: image.width(),
            height: image.height(),
            region_count: partition.region_count(),
            prompt: prompt.clone(),
            text: generation.text.clone(),
            token_ids: generation.token_ids.clone(),
            offsets,
        };
        let session = Session {
            image,
            partition,
            oracle,
            prompt,
            generation,
        };
        state
            .sessions
            .lock()
            .expect("session lock")
            .insert(id, Arc::new(session));
        Ok(Json(response))
    })
    .await
}

async fn session_partition(
    State(state): State<Arc<ServeState>>,
    Path(id): Path<String>,
) -> Result<Json<PartitionFile>, ApiError> {
    Ok(Json(PartitionFile::from_partition(
        &state.session(&id)?.partition,
    )))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRequest {
    pub session: String,
    /// Token positions to explain; all generated tokens when absent.
    #[serde(default)]
    pub positions: Option<Vec<usize>>,
}

async fn start_attribution(
    State(state): State<Arc<ServeState>>,
    Json(req): Json<AttributeRequest>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let session = state.session(&req.session)?;
    let selection = match req.positions {
        Some(p) if p.is_empty() => return Err(ApiError::bad_request("empty target set".into())),
        Some(p) => TargetSpec::Positions(p),
        None => TargetSpec::All,
    };
    let id = state.fresh_id("b");
    state.set_job(&id, Job::Pending);
    let job_id = id.clone();
    let job_state = state.clone();
    tokio::spawn(async move {
        let _permit = job_state
            .permits
            .clone()
            .acquire_owned()
            .await
            .expect("semaphore is never closed");
        let worker_state = job_state.clone();
        let worker_id = job_id.clone();
        let outcome = blocking(move || {
            let state = worker_state;
            let request = TargetRequest {
                prompt: Some(session.prompt.clone()),
                generation: Some(session.generation.clone()),
                selection,
            };
            let run = attribute_prepared(
                &state.config,
                &session.image,
                &format!("session {}", req.session),
                &session.partition,
                &session.oracle,
                state.source.tokenizer(),
                &request,
            )?;
            write_attribution(
                &run,
                &session.image,
                &state.config.out_dir.join("bundles").join(&worker_id),
            )?;
            let bundle = serde_json::to_value(&run.bundle).map_err(|e| Error::json("bundle", e))?;
            Ok(Job::Done {
                bundle: Arc::new(bundle),
                saliency_png: Arc::new(saliency_png(&run.saliency)),
            })
        })
        .await;
        let job = outcome.unwrap_or_else(|e| Job::Failed(e.message));
        job_state.set_job(&job_id, job);
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "bundle": id, "status": "pending" })),
    ))
}

async fn get_bundle(
    State(state): State<Arc<ServeState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    Ok(Json(match state.job(&id)? {
        Job::Pending => json!({ "status": "pending" }),
        Job::Done { bundle, .. } => json!({ "status": "done", "bundle": *bundle }),
        Job::Failed(error) => json!({ "status": "failed", "error": error }),
    }))
}

async fn get_saliency(
    State(state): State<Arc<ServeState>>,
    Path(file): Path<String>,
) -> Result<Response, ApiError> {
    let id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::not_found(format!("no such image {file:?}")))?;
    match state.job(id)? {
        Job::Done { saliency_png, .. } => Ok((
            [(header::CONTENT_TYPE, "image/png")],
            saliency_png.as_ref().clone(),
        )
            .into_response()),
        Job::Pending => Err(ApiError {
            status: StatusCode::CONFLICT,
            message: format!("bundle {id} is still running"),
        }),
        Job::Failed(error) => Err(ApiError {
            status: StatusCode::CONFLICT,
            message: format!("bundle {id} failed: {error}"),
        }),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub session: String,
    pub removed_region_ids: Vec<usize>,
    /// Token positions to score; all generated tokens when absent.
    #[serde(default)]
    pub positions: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub positions: Vec<usize>,
    pub probs: Vec<f64>,
    pub model_id: String,
    pub text: String,
    pub token_ids: Vec<u32>,
}

async fn whatif(
    State(state): State<Arc<ServeState>>,
    Json(req): Json<WhatIfRequest>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    let session = state.session(&req.session)?;
    blocking(move || {
        let n = session.partition.region_count();
        let removed = KeepSet::from_indices(n, req.removed_region_ids.iter().copied())?;
        let keep = removed.complement();
        let ids = session.generation.token_ids.clone();
        let positions = req
            .positions
            .clone()
            .unwrap_or_else(|| (0..ids.len()).collect());
        let targets = TokenTargets::factual(session.prompt.clone(), ids, positions.clone())?;
        let scene = Scene::new(&session.image, &session.partition, state.config.fill)?;
        let masked = scene.masked(&keep)?;
        let response = session.oracle.score_targets(&ProbQuery {
            image: masked.clone(),
            targets: &targets,
            keep: Some(keep.clone()),
        })?;
        let generation = session.oracle.generate(&eagle_core::GenerateRequest {
            image: masked,
            prompt: &session.prompt,
            max_tokens: state.config.max_new_tokens,
            keep: Some(keep),
        })?;
        Ok(Json(WhatIfResponse {
            positions,
            probs: response.probs,
            model_id: response.model_id,
            text: generation.text,
            token_ids: generation.token_ids,
        }))
    })
    .await
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" | "map" => "application/json",
        "png" => "image/png",
        "svg" => "image/svg+xml",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn static_asset(
    State(state): State<Arc<ServeState>>,
    uri: Uri,
) -> Result<Response, ApiError> {
    let missing = || ApiError::not_found(format!("no route for {}", uri.path()));
    let Some(root) = &state.options.static_dir else {
        return Err(missing());
    };
    let relative = PathBuf::from(uri.path().trim_start_matches('/'));
    if relative
        .components()
        .any(|c| !matches!(c, Component::Normal(_)))
    {
        return Err(missing());
    }
    let mut path = root.join(&relative);
    if relative.as_os_str().is_empty() || path.is_dir() {
        path = path.join("index.html");
    }
    let bytes = tokio::fs::read(&path).await.map_err(|_| missing())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/partition", get(session_partition))
        .route("/api/attribute", post(start_attribution))
        .route("/api/bundle/{id}", get(get_bundle))
        .route("/api/saliency/{file}", get(get_saliency))
        .route("/api/whatif", post(whatif))
        .fallback(static_asset)
        .with_state(state)
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServeState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> crate::error::Result<()> {
    let addr = listener
        .local_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "listener".into());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr, e))
}
