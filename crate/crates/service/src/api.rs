use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::study::{BatchOutcome, Study, StudyError};

pub type Shared = Arc<Mutex<Study>>;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into() }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::UnknownRater(_) => StatusCode::NOT_FOUND,
            StudyError::Excluded(_) => StatusCode::FORBIDDEN,
            StudyError::Duplicate { .. } => StatusCode::CONFLICT,
            StudyError::EmptyName
            | StudyError::BadCategory(_)
            | StudyError::NotInBatch { .. }
            | StudyError::EmptySubmission => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lock(state: &Shared) -> MutexGuard<'_, Study> {
    // a panic mid-request leaves the study as it was before the failed write
    state.lock().unwrap_or_else(|p| p.into_inner())
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterBody {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    item_id: String,
    category: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    rater_id: String,
    labels: Vec<LabelBody>,
}

async fn instructions(State(state): State<Shared>) -> Response {
    let body = lock(&state).instructions_json().to_string();
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn register(State(state): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: RegisterBody = parse(&body)?;
    let rater_id = lock(&state).register(&req.name)?;
    Ok((StatusCode::CREATED, Json(json!({ "rater_id": rater_id }))).into_response())
}

async fn rater(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(lock(&state).summary(&id)?).into_response())
}

async fn batch(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    match lock(&state).next_batch(&id)? {
        BatchOutcome::Batch(view) => Ok(Json(view).into_response()),
        BatchOutcome::Exhausted => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn labels(State(state): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: SubmitBody = parse(&body)?;
    let labels: Vec<(String, u32)> = req.labels.into_iter().map(|l| (l.item_id, l.category)).collect();
    let outcome = lock(&state).submit(&req.rater_id, &labels)?;
    Ok(Json(outcome).into_response())
}

async fn stats(State(state): State<Shared>) -> Response {
    Json(lock(&state).stats()).into_response()
}

pub fn router(study: Study) -> Router {
    router_shared(Arc::new(Mutex::new(study)))
}

/// Router over a study the caller keeps a handle to.
pub fn router_shared(study: Shared) -> Router {
    Router::new()
        .route("/api/instructions", get(instructions))
        .route("/api/raters", post(register))
        .route("/api/raters/{id}", get(rater))
        .route("/api/raters/{id}/batch", get(batch))
        .route("/api/labels", post(labels))
        .route("/api/stats", get(stats))
        .with_state(study)
}
