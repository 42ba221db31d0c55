use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rolereward_core::grouping::{
    fill_missing_embeddings, fit_kmeans_traced, parse_profiles, silhouette, CharacterProfile,
    GroupModel, GroupingError, DEFAULT_CLUSTER_COUNT, DEFAULT_MAX_ITERS,
};
use rolereward_core::grpo::group_advantages;
use rolereward_core::normalizer::{NormalizerError, NormalizerState};
use rolereward_core::pipeline::{
    score_items, score_items_updating, PipelineError, ScoreRequest, ScoreResponse,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::state::AppState;

pub type SharedState = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Grouping(_) => ApiError::internal(e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

/// JSON body decoding that reports every syntax or schema problem as 400.
fn decode<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

/// Serialized once so identical payloads produce identical bytes.
fn json_response<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    let body = serde_json::to_vec(value).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

pub fn router(state: SharedState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/score", post(score))
        .route("/v1/groups/fit", post(fit_groups))
        .route("/v1/groups/model", get(get_model).post(put_model))
        .route("/v1/stats", get(get_stats))
        .route("/v1/stats/restore", post(restore_stats))
        .route("/v1/grpo/config", get(grpo_config))
        .route("/v1/grpo/advantages", post(advantages))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn healthz(State(state): State<SharedState>) -> Response {
    let fitted = state.model().is_some();
    Json(json!({
        "status": "ok",
        "model_fitted": fitted,
        "stats_version": state.stats_version(),
    }))
    .into_response()
}

async fn score(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let request: ScoreRequest = decode(&body)?;
    let model = state
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no group model fitted"))?;
    let response = blocking(move || {
        if request.update_stats {
            let (items, version) = state.with_stats_mut(|stats| {
                match score_items_updating(&request.items, &model, stats, &state.scoring) {
                    Ok(items) => (Ok(items), request.items.len() as u64),
                    Err(e) => (Err(e), 0),
                }
            });
            Ok(ScoreResponse {
                items: items?,
                stats_version: version,
            })
        } else {
            let (stats, version) = state.stats_snapshot();
            Ok(ScoreResponse {
                items: score_items(&request.items, &model, &stats, &state.scoring)?,
                stats_version: version,
            })
        }
    })
    .await?;
    json_response(&response)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    #[serde(default)]
    profiles: Option<Vec<CharacterProfile>>,
    #[serde(default)]
    profiles_path: Option<PathBuf>,
    #[serde(rename = "G", default = "default_cluster_count")]
    cluster_count: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
}

fn default_cluster_count() -> usize {
    DEFAULT_CLUSTER_COUNT
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

#[derive(Debug, Serialize)]
struct FitSummary {
    #[serde(rename = "G")]
    cluster_count: usize,
    inertia: f64,
    silhouette: Option<f64>,
    iterations: usize,
    converged: bool,
}

fn load_profiles(req: &FitRequest) -> Result<Vec<CharacterProfile>, ApiError> {
    match (&req.profiles, &req.profiles_path) {
        (Some(_), Some(_)) => Err(ApiError::bad_request(
            "give either profiles or profiles_path, not both",
        )),
        (None, None) => Err(ApiError::bad_request(
            "profiles or profiles_path is required",
        )),
        (Some(inline), None) => {
            let mut profiles = inline.clone();
            fill_missing_embeddings(&mut profiles);
            Ok(profiles)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                ApiError::bad_request(format!("cannot read {}: {e}", path.display()))
            })?;
            parse_profiles(&text)
                .map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
        }
    }
}

async fn fit_groups(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let req: FitRequest = decode(&body)?;
    let summary = blocking(move || {
        let profiles = load_profiles(&req)?;
        let fit = fit_kmeans_traced(&profiles, req.cluster_count, req.seed, req.max_iters)
            .map_err(|e| match e {
                GroupingError::TooFewProfiles { .. } => {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
                }
                _ => ApiError::bad_request(e.to_string()),
            })?;
        let silhouette = if req.cluster_count >= 2 {
            silhouette(&fit.model, &profiles).ok()
        } else {
            None
        };
        let summary = FitSummary {
            cluster_count: req.cluster_count,
            inertia: fit.inertia_trace.last().copied().unwrap_or(0.0),
            silhouette,
            iterations: fit.iterations,
            converged: fit.converged,
        };
        state.install_model(fit.model);
        Ok(summary)
    })
    .await?;
    tracing::info!(
        groups = summary.cluster_count,
        inertia = summary.inertia,
        "group model fitted"
    );
    json_response(&summary)
}

async fn get_model(State(state): State<SharedState>) -> Result<Response, ApiError> {
    match state.model() {
        Some(model) => json_response(&*model),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "no group model fitted",
        )),
    }
}

async fn put_model(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let model: GroupModel = decode(&body)?;
    model
        .validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let g = model.cluster_count;
    state.install_model(model);
    json_response(&json!({ "ok": true, "G": g }))
}

async fn get_stats(State(state): State<SharedState>) -> Result<Response, ApiError> {
    let (stats, _) = state.stats_snapshot();
    json_response(&stats.snapshot())
}

async fn restore_stats(
    State(state): State<SharedState>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let restored = NormalizerState::from_json(text).map_err(|e| match e {
        NormalizerError::Malformed(m) => ApiError::bad_request(format!("malformed snapshot: {m}")),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
    })?;
    let version = state.replace_stats(restored);
    json_response(&json!({ "ok": true, "stats_version": version }))
}

async fn grpo_config(State(state): State<SharedState>) -> Result<Response, ApiError> {
    json_response(&state.config.grpo())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvantageRequest {
    groups: Vec<Vec<f64>>,
}

/// Group-relative advantages for reward groups, using the configured
/// `epsilon_adv`. Read-only.
async fn advantages(State(state): State<SharedState>, body: Bytes) -> Result<Response, ApiError> {
    let req: AdvantageRequest = decode(&body)?;
    let eps = state.config.epsilon_adv;
    let out = req
        .groups
        .iter()
        .map(|g| group_advantages(g, eps))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    json_response(&json!({ "advantages": out }))
}
