//! HTTP interface for audit-board stations.
//!
//! Every mutation is serialized through one lock and, when the service was
//! started from a state file, persisted before the response is sent.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::engine::{measure_all, save_state, AuditReport, AuditState, Draw, Interpretation};
use crate::error::AuditError;

struct Shared {
    audit: AuditState,
    path: Option<PathBuf>,
}

impl Shared {
    fn persist(&self) -> Result<(), AuditError> {
        match &self.path {
            Some(p) => save_state(&self.audit, p),
            None => Ok(()),
        }
    }
}

type AppState = Arc<Mutex<Shared>>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError(AuditError);

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.code() {
            "conflict" | "round_error" => StatusCode::CONFLICT,
            "not_found" | "unknown_contest" => StatusCode::NOT_FOUND,
            "io_error" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let body = ErrorBody { code: self.0.code().to_string(), message: self.0.to_string() };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct DrawView {
    #[serde(flatten)]
    pub draw: Draw,
    pub interpreted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundView {
    pub round: u32,
    pub closed: bool,
    pub draws: Vec<DrawView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AssertionView {
    pub contest_id: String,
    pub assertion_id: String,
    pub description: String,
    pub status: crate::assorters::AssertionStatus,
    pub p_value: f64,
    pub draws: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct StartRound {
    #[serde(default)]
    pub size: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntryResult {
    pub accepted: usize,
    pub pending: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Escalation {
    #[serde(default)]
    pub contest_id: Option<String>,
    #[serde(default)]
    pub reason: Option<String>,
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    Ok(serde_json::from_slice(body).map_err(AuditError::from)?)
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Shared> {
    state.lock().unwrap_or_else(|p| p.into_inner())
}

/// Applies `f` to a copy of the audit and commits it only when `f` and the
/// write to disk both succeed.
fn mutate<T>(state: &AppState, f: impl FnOnce(&mut AuditState) -> Result<T, AuditError>) -> Result<T, ApiError> {
    let mut shared = lock(state);
    let mut next = shared.audit.clone();
    let out = f(&mut next)?;
    let previous = std::mem::replace(&mut shared.audit, next);
    if let Err(e) = shared.persist() {
        shared.audit = previous;
        return Err(e.into());
    }
    Ok(out)
}

async fn get_state(State(state): State<AppState>) -> ApiResult<AuditReport> {
    Ok(Json(measure_all(&lock(&state).audit)?))
}

async fn get_assertions(State(state): State<AppState>) -> ApiResult<Vec<AssertionView>> {
    let shared = lock(&state);
    let views = shared
        .audit
        .contests
        .iter()
        .flat_map(|c| {
            c.assertions.iter().map(move |a| AssertionView {
                contest_id: c.contest_id.clone(),
                assertion_id: a.id().to_string(),
                description: a.assertion.assorter.description.clone(),
                status: a.assertion.status,
                p_value: a.p_value,
                draws: a.draws(),
            })
        })
        .collect();
    Ok(Json(views))
}

fn round_view(audit: &AuditState, k: u32) -> Result<RoundView, AuditError> {
    let round = audit.round(k)?;
    let covered: std::collections::HashSet<(&str, &str, u64)> = round
        .interpretations
        .iter()
        .map(|i| (i.contest_id.as_str(), i.stratum_id.as_deref().unwrap_or(""), i.index))
        .collect();
    Ok(RoundView {
        round: k,
        closed: round.closed,
        draws: round
            .draws
            .iter()
            .map(|d| DrawView {
                interpreted: round.closed || covered.contains(&(d.contest_id.as_str(), d.stratum_id.as_str(), d.index)),
                draw: d.clone(),
            })
            .collect(),
    })
}

async fn start_round(State(state): State<AppState>, Path(k): Path<u32>, body: Bytes) -> ApiResult<RoundView> {
    let request: StartRound = parse_body(&body)?;
    let view = mutate(&state, |audit| {
        let next = audit.rounds.len() as u32 + 1;
        if k != next {
            return Err(AuditError::Round(format!("the next round is {next}, not {k}")));
        }
        audit.draw_round(request.size)?;
        round_view(audit, k)
    })?;
    Ok(Json(view))
}

async fn get_draws(State(state): State<AppState>, Path(k): Path<u32>) -> ApiResult<RoundView> {
    Ok(Json(round_view(&lock(&state).audit, k)?))
}

async fn post_interpretations(
    State(state): State<AppState>,
    Path(k): Path<u32>,
    body: Bytes,
) -> ApiResult<EntryResult> {
    let batch: Vec<Interpretation> = serde_json::from_slice(&body).map_err(AuditError::from)?;
    let result = mutate(&state, |audit| {
        let accepted = audit.enter_interpretations(k, batch)?;
        Ok(EntryResult { accepted, pending: audit.pending_draws().len() })
    })?;
    Ok(Json(result))
}

async fn close_round(State(state): State<AppState>, Path(k): Path<u32>) -> ApiResult<AuditReport> {
    let report = mutate(&state, |audit| {
        audit.close_round(k)?;
        measure_all(audit)
    })?;
    Ok(Json(report))
}

async fn escalate(State(state): State<AppState>, body: Bytes) -> ApiResult<AuditReport> {
    let request: Escalation = parse_body(&body)?;
    let report = mutate(&state, |audit| {
        audit.escalate(request.contest_id.as_deref(), request.reason.as_deref().unwrap_or("operator request"))?;
        measure_all(audit)
    })?;
    Ok(Json(report))
}

/// Router over an audit; `path`, when given, receives every committed change.
pub fn router(audit: AuditState, path: Option<PathBuf>) -> Router {
    let state: AppState = Arc::new(Mutex::new(Shared { audit, path }));
    Router::new()
        .route("/audit/state", get(get_state))
        .route("/audit/assertions", get(get_assertions))
        .route("/audit/round/{k}", post(start_round))
        .route("/audit/round/{k}/draws", get(get_draws))
        .route("/audit/round/{k}/interpretations", post(post_interpretations))
        .route("/audit/round/{k}/close", post(close_round))
        .route("/audit/escalate", post(escalate))
        .with_state(state)
}

/// Serves `router` on `addr` until the process is stopped.
pub async fn serve(router: Router, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router).await
}
