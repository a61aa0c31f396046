use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use explainpipe_core::{PredictionRecord, Rating, Study, StudyError};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::commands::{open_study, read_prediction_file};
use crate::config::PREDICTIONS_FILE;

#[derive(Clone)]
pub struct AppState {
    study: Arc<Study>,
    predictions: Arc<HashMap<String, PredictionRecord>>,
}

impl AppState {
    pub fn new(study: Study, predictions: Vec<PredictionRecord>) -> Self {
        let mut by_id: HashMap<String, PredictionRecord> =
            predictions.into_iter().map(|r| (r.instance_id.clone(), r)).collect();
        for item in &study.sample().items {
            by_id.entry(item.instance_id.clone()).or_insert_with(|| item.clone());
        }
        AppState {
            study: Arc::new(study),
            predictions: Arc::new(by_id),
        }
    }

    /// Opens the study and rating log under `storage`, plus
    /// `predictions.jsonl` when present.
    pub fn open(storage: &Path) -> Result<Self> {
        let study = open_study(storage)?;
        let path = storage.join(PREDICTIONS_FILE);
        let predictions = if path.exists() {
            read_prediction_file(&path)?
        } else {
            Vec::new()
        };
        Ok(AppState::new(study, predictions))
    }

    pub fn study(&self) -> &Study {
        &self.study
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let (status, code) = match &e {
            StudyError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
            StudyError::UnknownInstance(_) => (StatusCode::NOT_FOUND, "unknown_instance"),
            StudyError::EmptyRater => (StatusCode::BAD_REQUEST, "empty_rater"),
            StudyError::MissingMetric(_) => (StatusCode::BAD_REQUEST, "missing_metric"),
            StudyError::UnknownMetric(_) => (StatusCode::BAD_REQUEST, "unknown_metric"),
            StudyError::OutOfScale { .. } => (StatusCode::BAD_REQUEST, "out_of_scale"),
            StudyError::ZeroRatings => (StatusCode::NOT_FOUND, "zero_ratings"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError {
            status,
            code,
            field: e.field(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"code": self.code, "message": self.message});
        if let Some(field) = self.field {
            body["field"] = Value::String(field);
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/study/items", get(items))
        .route("/api/study/ratings", post(submit))
        .route("/api/study/progress", get(progress))
        .route("/api/study/report", get(report))
        .route("/api/predictions/{id}", get(prediction))
        .with_state(state)
}

pub async fn serve(state: AppState, bind: &str) -> Result<()> {
    let addr: SocketAddr = bind.parse().with_context(|| format!("invalid bind address {bind:?}"))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("cannot bind {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: Option<String>,
}

fn rater_of(q: RaterQuery) -> Result<String, ApiError> {
    match q.rater {
        Some(r) if !r.trim().is_empty() => Ok(r),
        _ => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_rater",
            "query parameter `rater` is required",
        )
        .field("rater")),
    }
}

async fn items(State(state): State<AppState>, Query(q): Query<RaterQuery>) -> Result<Json<Value>, ApiError> {
    let rater = rater_of(q)?;
    let progress = state.study.register_rater(&rater)?;
    let items: Vec<Value> = state
        .study
        .sample()
        .items
        .iter()
        .map(|r| {
            json!({
                "instance_id": r.instance_id,
                "text": r.text,
                "predicted_label": r.predicted_label,
                "explanation": r.explanation,
            })
        })
        .collect();
    let cfg = state.study.config();
    Ok(Json(json!({
        "rater_id": rater,
        "cursor": progress.cursor,
        "total": progress.total,
        "metrics": cfg.metric_names,
        "scale": {"min": cfg.scale_min, "max": cfg.scale_max},
        "items": items,
    })))
}

#[derive(Deserialize)]
struct Submission {
    rater_id: String,
    instance_id: String,
    scores: BTreeMap<String, Value>,
    #[serde(default)]
    overwrite: bool,
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let sub: Submission = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed",
            format!("invalid rating body: {e}"),
        )
    })?;
    let mut scores = BTreeMap::new();
    for (metric, v) in sub.scores {
        let Some(score) = v.as_i64() else {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "not_an_integer",
                format!("score for {metric} must be an integer, got {v}"),
            )
            .field(format!("scores.{metric}")));
        };
        scores.insert(metric, score);
    }
    let mut rating = Rating::new(sub.rater_id, sub.instance_id, &[]);
    rating.scores = scores;
    let study = state.study.clone();
    let ack = tokio::task::spawn_blocking(move || study.submit_rating(rating, sub.overwrite))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::to_value(ack).expect("ack serializes")),
    ))
}

async fn progress(State(state): State<AppState>, Query(q): Query<RaterQuery>) -> Result<Json<Value>, ApiError> {
    let rater = rater_of(q)?;
    Ok(Json(
        serde_json::to_value(state.study.progress(&rater)).expect("progress serializes"),
    ))
}

async fn report(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let report = state.study.aggregate()?;
    Ok(Json(serde_json::to_value(&report).expect("report serializes")))
}

async fn prediction(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    state
        .predictions
        .get(&id)
        .map(|r| Json(serde_json::to_value(r).expect("record serializes")))
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_instance",
                format!("no prediction for {id:?}"),
            )
            .field("id")
        })
}
