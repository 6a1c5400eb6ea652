//! Test fixtures: an in-process model shim speaking the wire protocol, and a
//! runner for the serve-mode API.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use eagle::protocol::{
    image_from_b64, GenerateRequestBody, GenerateResponseBody, TokenProbsBatchRequest,
    TokenProbsBatchResponse, TokenProbsRequest, TokenProbsResponse, TokenizeRequest,
    TokenizeResponse,
};
use eagle::serve::{serve, ServeState};
use eagle::synthetic::SharedOracle;
use eagle::targets::{Tokenizer, WhitespaceTokenizer};
use eagle_core::{GenerateRequest, Image, ProbQuery, TokenTargets};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// Knobs and counters of the mock shim.
pub struct ShimState {
    pub oracle: SharedOracle,
    pub single_requests: AtomicUsize,
    pub batch_requests: AtomicUsize,
    pub generate_requests: AtomicUsize,
    /// Respond to probability requests with one extra probability.
    pub extra_prob: AtomicBool,
    /// Fail every request with this status and message.
    pub fail_with: Mutex<Option<(u16, String)>>,
    pub delay_ms: AtomicU64,
    pub required_bearer: Option<String>,
    /// Fixed tokenization returned by `/v1/tokenize`; whitespace otherwise.
    pub tokenization: Option<TokenizeResponse>,
    pub last_authorization: Mutex<Option<String>>,
}

impl ShimState {
    pub fn new(oracle: SharedOracle) -> Self {
        Self {
            oracle,
            single_requests: AtomicUsize::new(0),
            batch_requests: AtomicUsize::new(0),
            generate_requests: AtomicUsize::new(0),
            extra_prob: AtomicBool::new(false),
            fail_with: Mutex::new(None),
            delay_ms: AtomicU64::new(0),
            required_bearer: None,
            tokenization: None,
            last_authorization: Mutex::new(None),
        }
    }
}

fn error(status: u16, message: impl Into<String>) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST);
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn gate(state: &ShimState, headers: &HeaderMap) -> Option<Response> {
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    *state.last_authorization.lock().unwrap() = auth.clone();
    let delay = state.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    if let Some(token) = &state.required_bearer {
        if auth.as_deref() != Some(&format!("Bearer {token}")) {
            return Some(error(401, "missing or wrong bearer token"));
        }
    }
    state
        .fail_with
        .lock()
        .unwrap()
        .clone()
        .map(|(status, message)| error(status, message))
}

fn score(state: &ShimState, image: Image, targets: &TokenTargets) -> Result<Vec<f64>, String> {
    let mut probs = state
        .oracle
        .score_targets(&ProbQuery {
            image,
            targets,
            keep: None,
        })
        .map_err(|e| e.to_string())?
        .probs;
    if state.extra_prob.load(Ordering::SeqCst) {
        probs.push(0.5);
    }
    Ok(probs)
}

async fn token_probs(
    State(state): State<Arc<ShimState>>,
    headers: HeaderMap,
    Json(req): Json<TokenProbsRequest>,
) -> Response {
    state.single_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = gate(&state, &headers).await {
        return r;
    }
    let targets = match TokenTargets::new(req.prompt, req.generated_ids, req.targets) {
        Ok(t) => t,
        Err(e) => return error(400, e.to_string()),
    };
    let image = match image_from_b64(&req.image_b64) {
        Ok(i) => i,
        Err(e) => return error(400, e.to_string()),
    };
    match score(&state, image, &targets) {
        Ok(probs) => Json(TokenProbsResponse {
            probs,
            model_id: "mock-shim".into(),
        })
        .into_response(),
        Err(e) => error(400, e),
    }
}

async fn token_probs_batch(
    State(state): State<Arc<ShimState>>,
    headers: HeaderMap,
    Json(req): Json<TokenProbsBatchRequest>,
) -> Response {
    state.batch_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = gate(&state, &headers).await {
        return r;
    }
    let targets = match TokenTargets::new(req.prompt, req.generated_ids, req.targets) {
        Ok(t) => t,
        Err(e) => return error(400, e.to_string()),
    };
    let mut rows = Vec::new();
    for b64 in &req.images_b64 {
        let image = match image_from_b64(b64) {
            Ok(i) => i,
            Err(e) => return error(400, e.to_string()),
        };
        match score(&state, image, &targets) {
            Ok(p) => rows.push(p),
            Err(e) => return error(400, e),
        }
    }
    Json(TokenProbsBatchResponse {
        probs: rows,
        model_id: "mock-shim".into(),
    })
    .into_response()
}

async fn generate(
    State(state): State<Arc<ShimState>>,
    headers: HeaderMap,
    Json(req): Json<GenerateRequestBody>,
) -> Response {
    state.generate_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = gate(&state, &headers).await {
        return r;
    }
    let image = match image_from_b64(&req.image_b64) {
        Ok(i) => i,
        Err(e) => return error(400, e.to_string()),
    };
    let request = GenerateRequest {
        image,
        prompt: &req.prompt,
        max_tokens: req.max_tokens,
        keep: None,
    };
    match state.oracle.generate(&request) {
        Ok(g) => Json(GenerateResponseBody {
            text: g.text,
            token_ids: g.token_ids,
        })
        .into_response(),
        Err(e) => error(400, e.to_string()),
    }
}

async fn tokenize(
    State(state): State<Arc<ShimState>>,
    Json(req): Json<TokenizeRequest>,
) -> Response {
    let tokens = match &state.tokenization {
        Some(t) => t.clone(),
        None => WhitespaceTokenizer
            .tokenize(&req.text)
            .expect("whitespace tokenization never fails"),
    };
    Json(tokens).into_response()
}

/// Background server; stops when dropped.
pub struct Running {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn spawn_server<F, Fut>(start: F) -> Running
where
    F: FnOnce(tokio::net::TcpListener, oneshot::Receiver<()>) -> Fut + Send + 'static,
    Fut: std::future::Future<Output = ()>,
{
    let (tx, rx) = oneshot::channel();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            start(listener, rx).await;
        });
    });
    let addr = addr_rx.recv().unwrap();
    Running {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    }
}

pub fn start_shim(state: Arc<ShimState>) -> Running {
    spawn_server(move |listener, rx| async move {
        let app = Router::new()
            .route("/v1/token_probs", post(token_probs))
            .route("/v1/token_probs_batch", post(token_probs_batch))
            .route("/v1/generate", post(generate))
            .route("/v1/tokenize", post(tokenize))
            .with_state(state);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    })
}

pub fn start_serve(state: Arc<ServeState>) -> Running {
    spawn_server(move |listener, rx| async move {
        serve(listener, state, async {
            let _ = rx.await;
        })
        .await
        .unwrap();
    })
}

/// A port with nothing listening on it.
pub fn dead_url() -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .http_status_as_error(false)
        .build()
        .new_agent()
}

/// Status and parsed JSON body.
pub fn post_json(url: &str, body: &Value) -> (u16, Value) {
    let mut resp = agent()
        .post(url)
        .header("content-type", "application/json")
        .send(body.to_string())
        .unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (
        status,
        serde_json::from_str(&text).unwrap_or(Value::String(text)),
    )
}

pub fn get_json(url: &str) -> (u16, Value) {
    let mut resp = agent().get(url).call().unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (
        status,
        serde_json::from_str(&text).unwrap_or(Value::String(text)),
    )
}

pub fn get_bytes(url: &str) -> (u16, Vec<u8>, String) {
    let mut resp = agent().get(url).call().unwrap();
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    (status, resp.body_mut().read_to_vec().unwrap(), content_type)
}

/// Writes a PNG of `image` to `path`.
pub fn save_png(image: &Image, path: &Path) {
    std::fs::write(path, eagle::imaging::encode_png(image)).unwrap();
}
