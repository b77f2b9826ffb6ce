//! Axum router holding live sessions in memory.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use faultbench_core::evaluation::export_transcript;
use faultbench_core::orchestrator::{OrchestratorError, ProblemSummary};
use faultbench_core::{Action, Problem, ProblemCache, Session};
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::wire::{ActionRequest, ActionResponse, CreateSession, ErrorBody, SessionCreated, SubmitRequest};

/// Problems come from an optional on-disk cache and an in-memory set; the
/// in-memory set wins on id collisions.
#[derive(Debug, Default)]
pub struct AppState {
    cache: Option<ProblemCache>,
    problems: BTreeMap<String, Arc<Problem>>,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(cache: Option<ProblemCache>) -> Self {
        AppState {
            cache,
            ..AppState::default()
        }
    }

    pub fn with_problem(mut self, problem: Problem) -> Self {
        self.problems.insert(problem.id.clone(), Arc::new(problem));
        self
    }

    fn problem(&self, id: &str) -> Result<Arc<Problem>, ApiError> {
        if let Some(p) = self.problems.get(id) {
            return Ok(p.clone());
        }
        match &self.cache {
            Some(cache) => cache.get(id).map(Arc::new).map_err(ApiError::from),
            None => Err(ApiError::from(OrchestratorError::UnknownProblem(id.to_string()))),
        }
    }

    fn summaries(&self) -> Result<Vec<ProblemSummary>, ApiError> {
        let mut all: BTreeMap<String, ProblemSummary> = BTreeMap::new();
        if let Some(cache) = &self.cache {
            for s in cache.list()? {
                all.insert(s.id.clone(), s);
            }
        }
        for p in self.problems.values() {
            all.insert(p.id.clone(), p.summary());
        }
        Ok(all.into_values().collect())
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("session {id:?} not found")))
    }
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let code = match e {
            OrchestratorError::UnknownProblem(_) => StatusCode::NOT_FOUND,
            OrchestratorError::SessionClosed | OrchestratorError::SessionOpen => StatusCode::CONFLICT,
            OrchestratorError::Scenario(_) | OrchestratorError::Engine(_) => StatusCode::UNPROCESSABLE_ENTITY,
            OrchestratorError::Cache { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

/// Parses a body ourselves so malformed JSON still yields `{"error": ...}`.
fn parse<T: DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

async fn list_problems(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    Ok(Json(state.summaries()?).into_response())
}

async fn create_session(State(state): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let req: CreateSession = parse(&body)?;
    let problem = state.problem(&req.problem_id)?;
    let session = Session::start(problem, req.seed)?;
    let id = format!("s-{:06}", state.next_id.fetch_add(1, Ordering::SeqCst) + 1);
    let briefing = session.briefing().to_string();
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id: id, briefing })).into_response())
}

async fn post_action(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: String,
) -> Result<Response, ApiError> {
    let req: ActionRequest = parse(&body)?;
    let session = state.session(&id)?;
    let mut session = session.lock().expect("session poisoned");
    let obs = session.submit_action(Action::new(&req.api, req.args), req.thought)?;
    Ok(Json(ActionResponse {
        observation: obs.output,
        error: obs.error,
        sim_time_ms: session.clock(),
        status: session.status(),
    })
    .into_response())
}

async fn submit(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: String) -> Result<Response, ApiError> {
    let req: SubmitRequest = parse(&body)?;
    let session = state.session(&id)?;
    let mut session = session.lock().expect("session poisoned");
    let obs = session.submit_action(Action::new("submit", json!({ "solution": req.solution })), req.thought)?;
    match session.report() {
        Some(report) => Ok(Json(report).into_response()),
        None => Err(ApiError(StatusCode::BAD_REQUEST, obs.output)),
    }
}

async fn transcript(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let text = export_transcript(&session.lock().expect("session poisoned"));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/problems", get(list_problems))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/submit", post(submit))
        .route("/sessions/{id}/transcript", get(transcript))
        .with_state(state)
}

/// Serves `state` on `addr`, blocking the calling thread until the server
/// stops. `on_bound` sees the bound address before requests are accepted.
pub fn serve(addr: &str, state: Arc<AppState>, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_bound(listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })
}

/// Binds `addr` and serves from a background thread with its own runtime.
/// Returns the bound address (useful with port 0).
pub fn spawn(addr: &str, state: Arc<AppState>) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers");
            axum::serve(listener, router(state)).await.expect("server runs");
        })
    });
    Ok(local)
}
