use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use crm_api::{ApiError, CloseRequest, OutcomeInput, WhatIfRequest};
use crm_core::DesignConfig;
use serde::Deserialize;
use uuid::Uuid;

use crate::session::SessionError;
use crate::store::{SessionStore, StoreError};

pub type AppState = Arc<SessionStore>;

pub fn router(store: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(show_session))
        .route("/sessions/{id}/outcomes", post(record_outcome))
        .route("/sessions/{id}/what-if", post(what_if))
        .route("/sessions/{id}/estimates", get(estimates))
        .route("/sessions/{id}/recommendation", get(recommendation))
        .route("/sessions/{id}/partition", get(partition))
        .route("/sessions/{id}/audit", get(audit))
        .route("/sessions/{id}/close", post(close))
        .with_state(store)
}

pub struct AppError {
    status: StatusCode,
    body: ApiError,
}

impl AppError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        AppError { status, body: ApiError { error: code.into(), message: message.into(), field } }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for AppError {
    fn from(r: JsonRejection) -> Self {
        AppError::new(r.status(), "malformed_body", r.body_text(), None)
    }
}

impl From<SessionError> for AppError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::Closed => AppError::new(StatusCode::CONFLICT, "session_closed", msg, None),
            SessionError::LevelMismatch { .. } => {
                AppError::new(StatusCode::CONFLICT, "level_mismatch", msg, Some("level".into()))
            }
            SessionError::InvalidOutcome { field, message } => {
                AppError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_outcome", message, Some(field))
            }
            SessionError::InvalidConfig(c) => {
                let field = (!c.field.is_empty()).then(|| c.field.clone());
                AppError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_design", c.message, field)
            }
            SessionError::Inference(_) => {
                AppError::new(StatusCode::UNPROCESSABLE_ENTITY, "inference_failed", msg, None)
            }
            SessionError::Replay(_) => {
                AppError::new(StatusCode::INTERNAL_SERVER_ERROR, "replay_failed", msg, None)
            }
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => AppError::new(StatusCode::NOT_FOUND, "not_found", e.to_string(), None),
            StoreError::Session(s) => s.into(),
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                tracing::error!(error = %e, "storage failure");
                AppError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string(), None)
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, AppError>;

async fn create_session(
    State(store): State<AppState>,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> Result<(StatusCode, Json<crm_api::SessionView>), AppError> {
    let Json(value) = body?;
    let config = DesignConfig::from_value(value).map_err(SessionError::InvalidConfig)?;
    let view = store.create(config).await?;
    tracing::info!(id = %view.id, "session created");
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(store): State<AppState>) -> Json<Vec<crm_api::SessionSummary>> {
    Json(store.list().await)
}

async fn show_session(
    State(store): State<AppState>,
    Path(id): Path<Uuid>,
) -> ApiResult<crm_api::SessionView> {
    Ok(Json(store.get(id)?.read().await.view()))
}

async fn record_outcome(
    State(store): State<AppState>,
    Path(id): Path<Uuid>,
    body: Result<Json<OutcomeInput>, JsonRejection>,
) -> ApiResult<crm_api::OutcomeResponse> {
    let Json(input) = body?;
    let resp = store
        .update(id, |s| {
            s.record(&input, Utc::now())?;
            Ok(s.outcome_response())
        })
        .await?;
    Ok(Json(resp))
}

async fn what_if(
    State(store): State<AppState>,
    Path(id): Path<Uuid>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> ApiResult<crm_api::WhatIfResponse> {
    let Json(req) = body?;
    let handle = store.get(id)?;
    let session = handle.read().await;
    Ok(Json(session.what_if(&req)?))
}

async fn estimates(State(store): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<crm_api::EstimatesView> {
    Ok(Json(store.get(id)?.read().await.estimates()))
}

#[derive(Debug, Deserialize)]
struct GroupQuery {
    group: Option<u8>,
}

async fn recommendation(
    State(store): State<AppState>,
    Path(id): Path<Uuid>,
    Query(q): Query<GroupQuery>,
) -> ApiResult<crm_api::RecommendationView> {
    let handle = store.get(id)?;
    let session = handle.read().await;
    match q.group {
        Some(g) => Ok(Json(session.recommendation_for_group(g)?)),
        None => Ok(Json(session.recommendation_view())),
    }
}

async fn partition(State(store): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<crm_api::PartitionView> {
    Ok(Json(store.get(id)?.read().await.partition()?))
}

async fn audit(State(store): State<AppState>, Path(id): Path<Uuid>) -> ApiResult<Vec<crm_api::AuditEntry>> {
    Ok(Json(store.get(id)?.read().await.log().to_vec()))
}

async fn close(
    State(store): State<AppState>,
    Path(id): Path<Uuid>,
    body: Option<Json<CloseRequest>>,
) -> ApiResult<crm_api::SessionView> {
    let reason = body.and_then(|Json(b)| b.reason);
    let view = store
        .update(id, |s| {
            s.close(reason, Utc::now())?;
            Ok(s.view())
        })
        .await?;
    Ok(Json(view))
}
