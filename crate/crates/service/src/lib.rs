//! HTTP facade over the design pipeline: job submission, server-sent
//! progress events, candidate listing and selection, reruns and
//! content-addressed image blobs.
//!
//! Request bodies:
//!
//! - `POST /api/jobs`: [`SubmitRequest`]
//! - `POST /api/jobs/{id}/select`: `{"candidate_id": "..."}`
//! - `POST /api/jobs/{id}/rerun`: [`RerunRequest`]
//!
//! Events are framed as `id: {sequence}`, `event: {kind}` and
//! `data: {JobEvent as JSON}`; `?from=k` resumes at sequence `k`.

mod jobs;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wordart_core::pipeline::{persist_run, run_pipeline, DesignJob, JobConfig, JobInput, ServicesConfig};
use wordart_core::semtypo::RegionConfig;

pub use jobs::{BlobStore, CandidateImages, CandidateView, EventKind, JobEntry, JobEvent, JobStatus, Next};

const INDEX_HTML: &str = include_str!("../static/index.html");

#[derive(Clone)]
pub struct ServerConfig {
    pub font: Arc<Vec<u8>>,
    pub services: ServicesConfig,
    /// Finished runs are persisted here when set.
    pub runs_dir: Option<PathBuf>,
    /// Served at `/` instead of the bundled page when set.
    pub static_dir: Option<PathBuf>,
    /// Base for submitted jobs; request fields override it.
    pub job_defaults: JobConfig,
}

pub struct AppState {
    cfg: ServerConfig,
    jobs: RwLock<HashMap<String, Arc<JobEntry>>>,
    blobs: BlobStore,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServerConfig) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            jobs: RwLock::new(HashMap::new()),
            blobs: BlobStore::default(),
            counter: AtomicU64::new(0),
        })
    }

    pub fn job(&self, id: &str) -> Option<Arc<JobEntry>> {
        self.jobs.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }
}

/// `POST /api/jobs` body. `text` lists the characters to design; a
/// `prompt` alone is parsed by the LLM backend.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmitRequest {
    pub prompt: Option<String>,
    pub text: Option<String>,
    pub concept: Option<String>,
    pub domain: Option<String>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub config: Option<JobConfig>,
}

/// `POST /api/jobs/{id}/rerun` body; unset fields keep the prior run's
/// values, including its seed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerunRequest {
    pub text: Option<String>,
    pub concept: Option<String>,
    pub domain: Option<String>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub region: Option<RegionConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectRequest {
    candidate_id: String,
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_body",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({"code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn split_text(text: &str) -> Vec<String> {
    text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/jobs", post(submit))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/events", get(events))
        .route("/api/jobs/{id}/candidates", get(candidates))
        .route("/api/jobs/{id}/select", post(select))
        .route("/api/jobs/{id}/rerun", post(rerun))
        .route("/api/blobs/{digest}", get(blob));
    let api = match &state.cfg.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX_HTML) })),
    };
    api.with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: &str, cfg: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(AppState::new(cfg))).await
}

fn start(
    state: &Arc<AppState>,
    input: JobInput,
    config: JobConfig,
    parent: Option<String>,
) -> Result<String, ApiError> {
    config.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let n = state.counter.fetch_add(1, Ordering::SeqCst) + 1;
    let id = format!("job-{n:06}");
    let entry = JobEntry::new(id.clone(), parent);
    state
        .jobs
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(id.clone(), entry.clone());
    let job = DesignJob::new(id.clone(), input, config);
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let services = match st.cfg.services.build() {
            Ok(s) => s,
            Err(e) => {
                entry.fail(e.to_string(), true);
                return;
            }
        };
        let observer = |e: &wordart_core::pipeline::PipelineEvent| entry.observe(e, &st.blobs);
        let mut record = run_pipeline(job, &st.cfg.font, &services, &observer);
        let mut run_dir = None;
        if let Some(root) = &st.cfg.runs_dir {
            match persist_run(&record, root) {
                Ok(dir) => run_dir = Some(dir.display().to_string()),
                Err(e) => {
                    tracing::warn!(error = %e, "persisting run failed");
                    record.error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        entry.finish(record, run_dir, &st.blobs);
    });
    Ok(id)
}

async fn submit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: SubmitRequest = parse_body(&body)?;
    let characters = req.text.as_deref().map(split_text).unwrap_or_default();
    let has_concept = req.concept.as_deref().is_some_and(|c| !c.trim().is_empty());
    let has_prompt = req.prompt.as_deref().is_some_and(|p| !p.trim().is_empty());
    if !has_concept && !has_prompt {
        return Err(ApiError::bad_request("either concept or prompt is required"));
    }
    if has_concept && characters.is_empty() {
        return Err(ApiError::bad_request("text must name at least one character"));
    }
    let mut config = req.config.unwrap_or_else(|| state.cfg.job_defaults.clone());
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    if let Some(k) = req.k {
        config.k = k;
    }
    let input = JobInput {
        prompt: req.prompt,
        characters,
        concept: req.concept,
        domain: req.domain,
    };
    let id = start(&state, input, config, None)?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({"job_id": id}))))
}

fn find(state: &AppState, id: &str) -> Result<Arc<JobEntry>, ApiError> {
    state
        .job(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<JobStatus>, ApiError> {
    Ok(Json(find(&state, &id)?.status()))
}

fn sse_event(e: &JobEvent) -> Event {
    Event::default()
        .id(e.sequence.to_string())
        .event(e.kind.as_str())
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Events from `from` on, ending after the terminal event.
pub fn event_stream(job: Arc<JobEntry>, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = job.subscribe();
    futures::stream::unfold((job, from, rx), |(job, cursor, mut rx)| async move {
        loop {
            rx.borrow_and_update();
            match job.next(cursor) {
                Next::Event(e) => return Some((Ok(sse_event(&e)), (job, cursor + 1, rx))),
                Next::Closed => return None,
                Next::Wait => {
                    if rx.changed().await.is_err() {
                        return None;
                    }
                }
            }
        }
    })
}

async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let job = find(&state, &id)?;
    Ok(Sse::new(event_stream(job, q.from.unwrap_or(0))).keep_alive(KeepAlive::default()))
}

async fn candidates(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let job = find(&state, &id)?;
    let status = job.status();
    Ok(Json(serde_json::json!({
        "job_id": id,
        "state": status.state,
        "accepted": status.accepted,
        "candidates": job.candidates(),
    })))
}

async fn select(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let job = find(&state, &id)?;
    let req: SelectRequest = parse_body(&body)?;
    if !job.knows_candidate(&req.candidate_id) {
        return Err(ApiError::not_found(format!("unknown candidate {}", req.candidate_id)));
    }
    if let (Some(record), Some(root)) = (job.accept(&req.candidate_id), &state.cfg.runs_dir) {
        let root = root.clone();
        tokio::task::spawn_blocking(move || persist_run(&record, &root))
            .await
            .map_err(|e| ApiError::bad_request(e.to_string()))?
            .map_err(|e| ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                code: "io",
                message: e.to_string(),
            })?;
    }
    Ok(Json(serde_json::json!({"job_id": id, "accepted": req.candidate_id})))
}

async fn rerun(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let prior = find(&state, &id)?;
    let req: RerunRequest = if body.is_empty() {
        RerunRequest::default()
    } else {
        parse_body(&body)?
    };
    let Some(record) = prior.record() else {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            code: "not_finished",
            message: format!("job {id} is still running"),
        });
    };
    let mut input = record.job.input.clone();
    let mut config = record.job.config.clone();
    if let Some(req_prior) = &record.job.request {
        if input.concept.is_none() {
            input.concept = Some(req_prior.concept.clone());
            input.characters = req_prior.characters.clone();
            input.domain = Some(req_prior.domain.clone());
        }
    }
    if let Some(text) = &req.text {
        input.characters = split_text(text);
    }
    if let Some(c) = req.concept {
        input.concept = Some(c);
    }
    if let Some(d) = req.domain {
        input.domain = Some(d);
    }
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    if let Some(k) = req.k {
        config.k = k;
    }
    if let Some(region) = req.region {
        config.region = region;
    }
    let new_id = start(&state, input, config, Some(id.clone()))?;
    Ok((
        StatusCode::ACCEPTED,
        Json(serde_json::json!({"job_id": new_id, "parent": id})),
    ))
}

async fn blob(State(state): State<Arc<AppState>>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let bytes = state
        .blobs
        .get(&digest)
        .ok_or_else(|| ApiError::not_found(format!("unknown blob {digest}")))?;
    let kind = if bytes.starts_with(b"\x89PNG") {
        "image/png"
    } else {
        "image/svg+xml"
    };
    Ok((
        [
            (header::CONTENT_TYPE, kind),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes.as_ref().clone(),
    )
        .into_response())
}
