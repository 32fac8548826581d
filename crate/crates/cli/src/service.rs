//! HTTP/JSON review service over a [`Store`].
//!
//! ```text
//! GET  /api/health
//! GET  /api/runs
//! GET  /api/runs/{run_id}
//! GET  /api/runs/{run_id}/report
//! GET  /api/escalations?status=pending|resolved
//! GET  /api/escalations/{ticket_id}
//! POST /api/escalations/{ticket_id}/verdict
//! ```
//!
//! Errors are `{"error": <message>, "code": <code>}`; a conflict also
//! carries the verdict already applied under `existing`. Store calls block
//! on disk syncs, so they run on the blocking pool. Writes are serialized
//! inside the store.

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lipogate::app::{AppError, HumanVerdict, Store, TicketStatus};
use lipogate::orchestrator::ScreeningResult;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Arc;

#[derive(Clone)]
struct Shared {
    store: Arc<Store>,
    token: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    App(AppError),
    BadRequest(String),
    Unprocessable(String),
    Unauthorized,
    Internal(String),
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError::App(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, msg, existing) = match self {
            ApiError::App(e) => {
                let msg = e.to_string();
                match e {
                    AppError::UnknownTicket(_) => (StatusCode::NOT_FOUND, "unknown_ticket", msg, None),
                    AppError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run", msg, None),
                    AppError::Conflict { existing, .. } => (StatusCode::CONFLICT, "conflict", msg, Some(existing)),
                    AppError::InvalidVerdict(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_verdict", msg, None),
                    AppError::RunNotFinished(_) => (StatusCode::CONFLICT, "run_not_finished", msg, None),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", msg, None),
                }
            }
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m, None),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_verdict", m, None),
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token".to_string(),
                None,
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        if status.is_server_error() {
            log::error!("{msg}");
        }
        let mut body = json!({ "error": msg, "code": code });
        if let Some(v) = existing {
            body["existing"] = json!(v);
        }
        (status, Json(body)).into_response()
    }
}

async fn blocking<T, F>(store: &Arc<Store>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> Result<T, AppError> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::Internal(format!("worker: {e}")))?
        .map_err(ApiError::from)
}

/// Final report of a run. The digest covers `result` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub run_id: String,
    pub digest: String,
    pub result: ScreeningResult,
}

#[derive(Deserialize)]
struct StatusFilter {
    status: Option<String>,
}

async fn health(State(s): State<Shared>) -> Result<Response, ApiError> {
    let version = blocking(&s.store, |st| Ok(st.version())).await?;
    Ok(Json(json!({ "status": "ok", "version": version })).into_response())
}

async fn list_runs(State(s): State<Shared>) -> Result<Response, ApiError> {
    Ok(Json(blocking(&s.store, |st| Ok(st.runs())).await?).into_response())
}

async fn get_run(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(&s.store, move |st| st.run(&id)).await?).into_response())
}

async fn get_report(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = blocking(&s.store, move |st| {
        let result = st.report(&id)?;
        Ok(ReportBody {
            run_id: id,
            digest: result.digest(),
            result,
        })
    })
    .await?;
    Ok(Json(body).into_response())
}

async fn list_escalations(State(s): State<Shared>, Query(q): Query<StatusFilter>) -> Result<Response, ApiError> {
    let status = q
        .status
        .as_deref()
        .map(str::parse::<TicketStatus>)
        .transpose()
        .map_err(ApiError::BadRequest)?;
    Ok(Json(blocking(&s.store, move |st| Ok(st.list_escalations(status))).await?).into_response())
}

async fn get_ticket(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(&s.store, move |st| st.ticket(&id)).await?).into_response())
}

fn authorized(expected: &Option<String>, headers: &HeaderMap) -> bool {
    let Some(token) = expected else { return true };
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token)
}

async fn post_verdict(
    State(s): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    if !authorized(&s.token, &headers) {
        return Err(ApiError::Unauthorized);
    }
    let verdict: HumanVerdict = serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    verdict.validate().map_err(ApiError::Unprocessable)?;
    Ok(Json(blocking(&s.store, move |st| st.submit_verdict(&id, verdict)).await?).into_response())
}

/// The service routes. `token`, when set, is required as a bearer token
/// on the verdict endpoint.
pub fn router(store: Arc<Store>, token: Option<String>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{run_id}", get(get_run))
        .route("/api/runs/{run_id}/report", get(get_report))
        .route("/api/escalations", get(list_escalations))
        .route("/api/escalations/{ticket_id}", get(get_ticket))
        .route("/api/escalations/{ticket_id}/verdict", post(post_verdict))
        .with_state(Shared { store, token })
}

/// Serves until ctrl-c.
pub async fn serve(addr: &str, store: Arc<Store>, token: Option<String>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
