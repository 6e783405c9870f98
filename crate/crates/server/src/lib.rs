//! HTTP service over the allocation engine.
//!
//! Allocation jobs run on the blocking pool; everything a job produces is
//! written under the data directory so a restarted service can keep serving
//! finished jobs.

pub mod feedback;
pub mod overrides;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gesa_core::datagen::{generate_dataset, GenSpec};
use gesa_core::explain::{explain_allocation, ExplainContext, ExplanationBundle, ShapConfig};
use gesa_core::model::{AllocationPlan, Constraint, Dataset};
use gesa_core::objectives::check_simplex;
use gesa_core::optimizer::SelectionPolicy;
use gesa_core::pipeline::AllocationConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use crate::feedback::{apply_feedback, FeedbackState};
use crate::overrides::{check_override, OverrideRecord, OverrideRequest, Rejection};
use crate::store::{dataset_id, now_ms, ServiceError, Store};

pub const DEFAULT_PORT: u16 = 8080;
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const MAX_BODY: usize = 256 * 1024 * 1024;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ServiceError>;

struct CachedResponse {
    request_digest: Vec<u8>,
    status: StatusCode,
    body: Bytes,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    replies: Arc<Mutex<HashMap<(Method, String, String), CachedResponse>>>,
}

impl AppState {
    pub fn open(root: impl Into<PathBuf>) -> store::Result<Self> {
        Ok(Self { store: Arc::new(Store::open(root)?), replies: Arc::new(Mutex::new(HashMap::new())) })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_str("{}").map_err(|e| ServiceError::BadRequest(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

#[derive(Serialize)]
struct DatasetSummary {
    dataset_id: String,
    candidates: usize,
    roles: usize,
    skills: usize,
    interactions: usize,
    ground_truth: usize,
}

fn summary(id: &str, ds: &Dataset) -> DatasetSummary {
    DatasetSummary {
        dataset_id: id.to_string(),
        candidates: ds.candidates.len(),
        roles: ds.roles.len(),
        skills: ds.skills.len(),
        interactions: ds.interactions.len(),
        ground_truth: ds.ground_truth.len(),
    }
}

async fn post_dataset(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let ds = blocking(move || {
        let text = std::str::from_utf8(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mut ds = Dataset::from_json_str(text)?;
        ds.canonicalize();
        let id = dataset_id(&ds);
        let stored = app.store.put_dataset(&id, ds)?;
        Ok(summary(&id, &stored))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(ds)))
}

async fn get_dataset(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let ds = app.store.dataset(&id)?;
    Ok(Json(json!({ "summary": summary(&id, &ds), "dataset": &*ds })))
}

async fn generate(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let spec: GenSpec = parse(&body)?;
    let out = blocking(move || {
        let ds = generate_dataset(&spec)?;
        let stored = app.store.put_dataset(&id, ds)?;
        Ok(summary(&id, &stored))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)))
}

#[derive(Deserialize)]
struct SubmitRequest {
    dataset_id: String,
    #[serde(default)]
    config: AllocationConfig,
}

async fn submit(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: SubmitRequest = parse(&body)?;
    let job = app.store.create_job(&req.dataset_id, req.config)?;
    let store = app.store.clone();
    let id = job.job_id.clone();
    tokio::task::spawn_blocking(move || store.run_job(&id));
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(app): State<AppState>, Path(job): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(app.store.job(&job)?))
}

async fn get_front(State(app): State<AppState>, Path(job): Path<String>) -> ApiResult<Response> {
    let artifacts = blocking(move || app.store.artifacts(&job)).await?;
    Ok(([("content-type", "application/json")], artifacts.front.to_json()).into_response())
}

#[derive(Deserialize)]
struct SelectRequest {
    /// Defaults to the feedback weights.
    #[serde(default)]
    weights: Option<[f64; 3]>,
    #[serde(default)]
    mandatory: Vec<Constraint>,
}

#[derive(Serialize)]
struct SelectResponse {
    plan: AllocationPlan,
    weights: [f64; 3],
    /// False when overrides exist and the working plan was left alone.
    applied: bool,
}

async fn select(State(app): State<AppState>, Path(job): Path<String>, body: Bytes) -> ApiResult<Json<SelectResponse>> {
    let req: SelectRequest = parse(&body)?;
    let weights = req.weights.unwrap_or(app.store.feedback().weights);
    check_simplex("selection weights", &weights)?;
    let policy = SelectionPolicy { weights, mandatory: req.mandatory };
    let (plan, applied) = blocking(move || app.store.select(&job, &policy)).await?;
    Ok(Json(SelectResponse { plan, weights, applied }))
}

async fn post_override(
    State(app): State<AppState>,
    Path(job): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: OverrideRequest = parse(&body)?;
    let out = blocking(move || {
        let artifacts = app.store.artifacts(&job)?;
        let state = app.store.plan_state(&job)?;
        check_override(&artifacts.dataset, &state.current, &req).map_err(|r| match r {
            Rejection::UnknownEntity(e) => ServiceError::from(e),
            Rejection::Invalid(text) => ServiceError::Unprocessable(text),
        })?;
        let record = OverrideRecord {
            seq: 0,
            job_id: job.clone(),
            candidate_id: req.candidate_id,
            from_role: None,
            to_role: req.to_role,
            justification: req.justification,
            actor: if req.actor.trim().is_empty() { "anonymous".into() } else { req.actor },
            reason: req.reason.filter(|r| !r.trim().is_empty()).unwrap_or_else(|| "unspecified".into()),
            timestamp_ms: now_ms(),
        };
        let (record, plan) = app.store.record_override(&job, record)?;
        let fairness = app.store.fairness(&job)?;
        Ok(json!({ "record": record, "plan": plan, "fairness": fairness }))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn get_overrides(State(app): State<AppState>, Path(job): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let state = blocking(move || app.store.plan_state(&job)).await?;
    Ok(Json(json!({ "overrides": state.log, "base": state.base, "plan": state.current })))
}

async fn explanation(
    State(app): State<AppState>,
    Path((job, candidate, role)): Path<(String, String, String)>,
) -> ApiResult<Json<ExplanationBundle>> {
    let bundle = blocking(move || {
        let a = app.store.artifacts(&job)?;
        let state = app.store.plan_state(&job)?;
        let record = app.store.job(&job)?;
        let weights = record.config.selection.map_or(app.store.feedback().weights, |p| p.weights);
        let shap = ShapConfig::default();
        let ctx = ExplainContext {
            dataset: &a.dataset,
            tables: &a.tables,
            merit_weights: &a.merit,
            objective_weights: a.front.effective_weights(weights),
            diversity: &a.diversity,
            plan: &state.current,
            shap: &shap,
        };
        Ok(explain_allocation(&candidate, &role, &ctx)?)
    })
    .await?;
    Ok(Json(bundle))
}

async fn fairness_report(State(app): State<AppState>, Path(job): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || app.store.fairness(&job)).await?))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    weights: [f64; 3],
    #[serde(default)]
    eta: Option<f64>,
}

async fn post_feedback(State(app): State<AppState>, body: Bytes) -> ApiResult<Json<FeedbackState>> {
    let req: FeedbackRequest = parse(&body)?;
    let mut state = app.store.feedback();
    if let Some(eta) = req.eta {
        state.eta = eta;
    }
    let next = apply_feedback(&state, req.weights)?;
    app.store.set_feedback(next.clone())?;
    Ok(Json(next))
}

async fn get_feedback(State(app): State<AppState>) -> Json<FeedbackState> {
    Json(app.store.feedback())
}

/// Replays the stored reply for a repeated `Idempotency-Key` on the same
/// method and path. Reusing a key with a different body is refused.
async fn idempotency(State(app): State<AppState>, req: Request, next: Next) -> Response {
    let key = req.headers().get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string);
    let Some(key) = key.filter(|_| req.method() == Method::POST) else {
        return next.run(req).await;
    };
    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ServiceError::BadRequest(e.to_string()).into_response(),
    };
    let digest = Sha256::digest(&bytes).to_vec();
    let slot = (parts.method.clone(), parts.uri.path().to_string(), key);
    let mut replies = app.replies.lock().await;
    if let Some(cached) = replies.get(&slot) {
        if cached.request_digest != digest {
            return ServiceError::Unprocessable("idempotency key reused with a different request".into()).into_response();
        }
        return (cached.status, [("content-type", "application/json")], cached.body.clone()).into_response();
    }
    let response = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    if !response.status().is_success() {
        return response;
    }
    let (parts, body) = response.into_parts();
    let body = match to_bytes(body, MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return ServiceError::Internal(e.to_string()).into_response(),
    };
    replies.insert(slot, CachedResponse { request_digest: digest, status: parts.status, body: body.clone() });
    Response::from_parts(parts, Body::from(body))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(post_dataset))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/generate", post(generate))
        .route("/allocations", post(submit))
        .route("/allocations/{job}", get(get_job))
        .route("/allocations/{job}/front", get(get_front))
        .route("/allocations/{job}/select", post(select))
        .route("/allocations/{job}/overrides", post(post_override).get(get_overrides))
        .route("/allocations/{job}/explanations/{candidate}/{role}", get(explanation))
        .route("/allocations/{job}/fairness-report", get(fairness_report))
        .route("/feedback/weights", post(post_feedback).get(get_feedback))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .with_state(state)
}

/// Data directory and port from `GESA_DATA_DIR` and `GESA_PORT`.
pub fn env_config() -> Result<(PathBuf, u16), String> {
    let root = std::env::var("GESA_DATA_DIR").unwrap_or_else(|_| "gesa-data".into());
    let port = match std::env::var("GESA_PORT") {
        Ok(p) => p.parse().map_err(|_| format!("GESA_PORT `{p}` is not a port number"))?,
        Err(_) => DEFAULT_PORT,
    };
    Ok((root.into(), port))
}

pub async fn serve(root: PathBuf, port: u16) -> std::io::Result<()> {
    let state = AppState::open(&root).map_err(std::io::Error::other)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} on {}", root.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
