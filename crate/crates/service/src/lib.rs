//! JSON-over-HTTP front end for the audit engine.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/v1/healthz` | liveness |
//! | POST | `/v1/tables` | build a lookup table |
//! | POST | `/v1/risk` | exact or Monte Carlo risk of a table |
//! | GET  | `/v1/sessions` | list sessions |
//! | POST | `/v1/sessions` | start a session (201) |
//! | POST | `/v1/sessions/import` | start a session from an exported trail (201) |
//! | GET  | `/v1/sessions/{id}` | session state, `ETag` = revision |
//! | POST | `/v1/sessions/{id}/rounds` | record a round |
//! | GET  | `/v1/sessions/{id}/trail` | audit trail |
//!
//! Errors are `{"code": ..., "message": ...}`.

pub mod store;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ballot_audit::riskeval::{max_risk, RiskConfig, DEFAULT_EXACT_BALLOT_CAP};
use ballot_audit::session::Election;
use ballot_audit::tables::build_table_with;
use ballot_audit::{
    Decision, Execution, LookupTable, RiskMethod, RuleSpec, Schedule, SessionError, SessionState, SessionStatus,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;
use uuid::Uuid;

pub use store::{ApiSession, Store, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Wall-clock limit for table builds and risk evaluation.
    pub compute_timeout: Duration,
    pub exact_ballot_cap: u64,
    pub max_trials: u64,
    pub exec: Execution,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            compute_timeout: Duration::from_secs(60),
            exact_ballot_cap: DEFAULT_EXACT_BALLOT_CAP,
            max_trials: 1_000_000,
            exec: Execution::default(),
        }
    }
}

pub struct AppState {
    pub store: Store,
    pub config: ServiceConfig,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/tables", post(create_table))
        .route("/v1/risk", post(evaluate_risk))
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/import", post(import_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/rounds", post(record_round))
        .route("/v1/sessions/{id}/trail", get(get_trail))
        .layer(DefaultBodyLimit::max(32 << 20))
        .layer(CorsLayer::permissive().expose_headers([header::ETAG]))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        ApiError { status, code, message: message.to_string() }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn invalid_config(message: impl ToString) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_configuration", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e),
            StoreError::Stale { .. } => ApiError::new(StatusCode::CONFLICT, "revision_conflict", e),
            StoreError::Session(SessionError::Terminal(_)) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "session_closed", e)
            }
            StoreError::Session(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_round", e),
            StoreError::Io(_) | StoreError::Corrupt { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses the body ourselves so malformed JSON gets our error shape.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(ApiError::bad_request)
}

fn parse_id(raw: &str) -> ApiResult<Uuid> {
    raw.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {raw}")))
}

/// Runs CPU-bound work off the async runtime, bounded by the configured timeout.
async fn compute<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    let limit = state.config.compute_timeout;
    match tokio::time::timeout(limit, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(result)) => result,
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", join)),
        Err(_) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "timeout",
            format!("computation exceeded {}s", limit.as_secs_f64()),
        )),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION"), "persistent": state.store.log_path().is_some()}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRequest {
    rule: RuleSpec,
    /// Defaults to 200 doubling to 51200.
    #[serde(default)]
    schedule: Option<Schedule>,
}

fn build(state: &AppState, rule: &RuleSpec, schedule: Option<Schedule>) -> ApiResult<LookupTable> {
    let compiled = rule.compile().map_err(ApiError::invalid_config)?;
    build_table_with(&compiled, &schedule.unwrap_or_default(), state.config.exec).map_err(ApiError::invalid_config)
}

async fn create_table(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<LookupTable>> {
    let req: TableRequest = parse(&body)?;
    let s = state.clone();
    compute(&state, move || build(&s, &req.rule, req.schedule)).await.map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskRequest {
    #[serde(default)]
    table: Option<LookupTable>,
    #[serde(default)]
    rule: Option<RuleSpec>,
    #[serde(default)]
    schedule: Option<Schedule>,
    #[serde(rename = "N", default)]
    ballots: Option<u64>,
    #[serde(default = "default_method")]
    method: RiskMethod,
}

fn default_method() -> RiskMethod {
    RiskMethod::ExactDp
}

/// A table given inline or built from `rule` + `schedule`.
fn resolve_table(state: &AppState, table: Option<LookupTable>, rule: Option<RuleSpec>, schedule: Option<Schedule>) -> ApiResult<LookupTable> {
    match (table, rule) {
        (Some(t), None) if schedule.is_none() => {
            t.validate().map_err(ApiError::invalid_config)?;
            Ok(t)
        }
        (None, Some(rule)) => build(state, &rule, schedule),
        _ => Err(ApiError::bad_request("give either `table` or `rule` (with optional `schedule`)")),
    }
}

async fn evaluate_risk(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: RiskRequest = parse(&body)?;
    if let RiskMethod::MonteCarlo { trials, .. } = req.method {
        if trials > state.config.max_trials {
            return Err(ApiError::invalid_config(format!("at most {} trials per request", state.config.max_trials)));
        }
    }
    let s = state.clone();
    let report = compute(&state, move || {
        let table = resolve_table(&s, req.table, req.rule, req.schedule)?;
        let ballots = table
            .ballots
            .or(req.ballots)
            .ok_or_else(|| ApiError::bad_request("`N` is required for tables sampled with replacement"))?;
        let cfg = RiskConfig { exec: s.config.exec, exact_ballot_cap: s.config.exact_ballot_cap };
        max_risk(&table, ballots, &req.method, &cfg).map_err(ApiError::invalid_config)
    })
    .await?;
    Ok(Json(report).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(rename = "N", default)]
    ballots: Option<u64>,
    #[serde(default)]
    winner: Option<String>,
    #[serde(default)]
    loser: Option<String>,
    #[serde(default)]
    rule: Option<RuleSpec>,
    #[serde(default)]
    schedule: Option<Schedule>,
    /// A frozen table to use as-is instead of `rule`.
    #[serde(default)]
    table: Option<LookupTable>,
}

#[derive(Serialize)]
struct SessionView<'a> {
    #[serde(flatten)]
    session: &'a ApiSession,
    next_round: Option<u64>,
}

fn session_response(status: StatusCode, session: &ApiSession) -> Response {
    let view = SessionView { session, next_round: session.state.next_round() };
    let mut resp = (status, Json(view)).into_response();
    resp.headers_mut().insert(header::ETAG, etag(session.revision));
    resp
}

fn etag(revision: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{revision}\"")).expect("ascii")
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse(&body)?;
    let rule_ballots = req.rule.as_ref().and_then(RuleSpec::ballots);
    let ballots = req
        .ballots
        .or(req.table.as_ref().and_then(|t| t.ballots))
        .or(rule_ballots)
        .ok_or_else(|| ApiError::bad_request("`N` is required"))?;
    for declared in [rule_ballots, req.table.as_ref().and_then(|t| t.ballots)].into_iter().flatten() {
        if declared != ballots {
            return Err(ApiError::invalid_config(SessionError::BallotMismatch { rule: declared, election: ballots }));
        }
    }
    let election = Election {
        ballots,
        winner: req.winner.unwrap_or_else(|| "winner".into()),
        loser: req.loser.unwrap_or_else(|| "loser".into()),
    };
    let s = state.clone();
    let table = compute(&state, move || resolve_table(&s, req.table, req.rule, req.schedule)).await?;
    if table.schedule.last() > ballots {
        return Err(ApiError::invalid_config(format!("schedule reaches {} but only {ballots} ballots were cast", table.schedule.last())));
    }
    let session = state.store.insert(SessionState::from_table(Uuid::new_v4(), election, table))?;
    Ok(session_response(StatusCode::CREATED, &session))
}

async fn import_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    // Import replays every round, so it runs with the other heavy work.
    let imported = compute(&state, move || {
        SessionState::import_trail(&body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_trail", e))
    })
    .await?;
    if state.store.get(imported.id).is_ok() {
        return Err(ApiError::new(StatusCode::CONFLICT, "duplicate_session", format!("session {} already exists", imported.id)));
    }
    let session = state.store.insert(imported)?;
    Ok(session_response(StatusCode::CREATED, &session))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let sessions: Vec<serde_json::Value> = state
        .store
        .list()
        .iter()
        .map(|s| {
            json!({
                "id": s.state.id,
                "N": s.state.election.ballots,
                "status": s.state.status,
                "rounds": s.state.rounds.len(),
                "revision": s.revision,
                "created_at": s.created_at,
            })
        })
        .collect();
    Json(json!({ "sessions": sessions }))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.store.get(parse_id(&id)?)?;
    Ok(session_response(StatusCode::OK, &session))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundRequest {
    n: u64,
    k: u64,
    #[serde(default)]
    revision: Option<u64>,
}

#[derive(Serialize)]
struct RoundResponse {
    verdict: Decision,
    status: SessionStatus,
    revision: u64,
    next_round: Option<u64>,
}

/// Accepts `"3"`, `W/"3"` or a bare `3`.
fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    let Some(raw) = headers.get(header::IF_MATCH) else { return Ok(None) };
    let text = raw.to_str().unwrap_or_default().trim();
    let text = text.strip_prefix("W/").unwrap_or(text).trim_matches('"');
    text.parse().map(Some).map_err(|_| ApiError::bad_request(format!("If-Match must carry a revision number, got {raw:?}")))
}

async fn record_round(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let req: RoundRequest = parse(&body)?;
    let revision = match (req.revision, if_match(&headers)?) {
        (Some(a), Some(b)) if a != b => {
            return Err(ApiError::bad_request(format!("body revision {a} disagrees with If-Match {b}")))
        }
        (Some(r), _) | (None, Some(r)) => r,
        (None, None) => {
            // Distinguish an unknown session from a missing precondition.
            state.store.get(id)?;
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "revision_required",
                "send the session revision in the body or an If-Match header",
            ));
        }
    };
    let (verdict, session) = state.store.record_round(id, revision, req.n, req.k)?;
    let body = RoundResponse {
        verdict,
        status: session.state.status,
        revision: session.revision,
        next_round: session.state.next_round(),
    };
    let mut resp = Json(body).into_response();
    resp.headers_mut().insert(header::ETAG, etag(session.revision));
    Ok(resp)
}

async fn get_trail(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = state.store.get(parse_id(&id)?)?;
    let disposition = format!("attachment; filename=\"audit-{}.json\"", session.state.id);
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/json")),
            (header::CONTENT_DISPOSITION, HeaderValue::from_str(&disposition).expect("ascii")),
        ],
        session.state.export_trail(),
    )
        .into_response())
}
