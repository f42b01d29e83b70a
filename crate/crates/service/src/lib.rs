//! HTTP JSON API: list datasets, open a session on a dataset/model pair,
//! ask "Why P not Q?" about the session's current point, resample.

pub mod api;
pub mod cache;
pub mod error;
pub mod session;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::services::ServeDir;

use cfshap_core::counterfactual::mutate_mask;
use cfshap_core::{registry, Dataset, Family, PipelineConfig};

use crate::api::{
    CreateSession, DatasetDescriptor, ExplainRequest, ExplainResponse, PointView, SessionView, ShapleyView,
};
use crate::cache::{CacheKey, ModelCache};
use crate::error::ApiError;
use crate::session::{new_session_id, Session, SessionStore};

pub const DEFAULT_PORT: u16 = 8080;
pub const SESSION_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Pipeline settings; a session's seed replaces `pipeline.seed`.
    pub pipeline: PipelineConfig,
    pub session_ttl: Duration,
    /// How long a session request waits for training before a 503.
    pub training_wait: Duration,
    /// Served under `/` when the directory exists.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            session_ttl: SESSION_TTL,
            training_wait: Duration::from_secs(30),
            static_dir: None,
        }
    }
}

struct Inner {
    datasets: Vec<Arc<Dataset>>,
    config: ServiceConfig,
    cache: Arc<ModelCache>,
    sessions: SessionStore,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// State serving the built-in datasets.
    pub fn new(config: ServiceConfig) -> cfshap_core::Result<Self> {
        let datasets = registry::builtin_names()
            .iter()
            .map(|n| registry::builtin(n))
            .collect::<cfshap_core::Result<Vec<Dataset>>>()?;
        Ok(Self::with_datasets(datasets, config))
    }

    pub fn with_datasets(datasets: Vec<Dataset>, config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            datasets: datasets.into_iter().map(Arc::new).collect(),
            sessions: SessionStore::new(config.session_ttl),
            config,
            cache: Arc::new(ModelCache::default()),
        }))
    }

    pub fn cache(&self) -> &ModelCache {
        &self.0.cache
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.0.sessions
    }

    fn dataset(&self, name: &str) -> Result<Arc<Dataset>, ApiError> {
        self.0
            .datasets
            .iter()
            .find(|d| d.name() == name)
            .cloned()
            .ok_or_else(|| ApiError::unknown_dataset(name))
    }
}

pub fn router(state: AppState) -> Router {
    let static_dir = state.0.config.static_dir.clone();
    let api = Router::new()
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/explain", post(explain))
        .route("/sessions/{id}/resample", get(resample))
        .with_state(state);
    match static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn list_datasets(State(state): State<AppState>) -> Json<Vec<DatasetDescriptor>> {
    Json(
        state
            .0
            .datasets
            .iter()
            .map(|d| DatasetDescriptor {
                name: d.name().to_string(),
                n_features: d.n_features(),
                n_classes: d.n_classes(),
                n_rows: d.n_rows(),
                feature_names: d.feature_names(),
                class_names: d.class_names().to_vec(),
            })
            .collect(),
    )
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn session_view(s: &Session) -> SessionView {
    let p = &s.pipeline;
    SessionView {
        id: s.id.clone(),
        dataset: s.dataset.clone(),
        model: s.family.key().to_string(),
        model_fingerprint: p.model().fingerprint().to_string(),
        seed: s.seed,
        created_at: s.created_at.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        feature_names: p.data().feature_names(),
        class_names: p.data().class_names().to_vec(),
        point: PointView {
            row: s.row,
            values: p.raw().row(s.row).to_vec(),
            predicted: s.predicted,
            predicted_name: p.data().class_names()[s.predicted].clone(),
            probabilities: s.probabilities.clone(),
        },
    }
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let req = body(payload)?;
    let dataset = state.dataset(&req.dataset)?;
    let family = Family::from_str(&req.model)
        .map_err(|_| ApiError::new(axum::http::StatusCode::BAD_REQUEST, "unknown_model", format!("no model family {:?}", req.model)))?;
    let mut config = state.0.config.pipeline.clone();
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    let key = CacheKey::new(&req.dataset, family, &config);
    let pipeline = state
        .0
        .cache
        .get(key, dataset, config, state.0.config.training_wait)
        .await?;
    let session = Session::new(new_session_id(), req.dataset, family, req.seed, pipeline)?;
    let view = session_view(&session);
    state.0.sessions.insert(session);
    Ok(Json(view))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    state.0.sessions.with(&id, |s| Ok(Json(session_view(s))))
}

async fn resample(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    state.0.sessions.with(&id, |s| {
        s.resample()?;
        Ok(Json(session_view(s)))
    })
}

async fn explain(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ExplainRequest>, JsonRejection>,
) -> Result<Json<ExplainResponse>, ApiError> {
    let req = body(payload)?;
    let (pipeline, dataset, family, row) = state
        .0
        .sessions
        .with(&id, |s| Ok((s.pipeline.clone(), s.dataset.clone(), s.family, s.row)))?;
    let response = tokio::task::spawn_blocking(move || explain_point(&pipeline, dataset, family, row, req.desired))
        .await
        .map_err(|e| ApiError::internal(format!("explanation panicked: {e}")))??;
    Ok(Json(response))
}

/// Pure in (model, point, desired, Shapley settings).
pub fn explain_point(
    pipeline: &cfshap_core::Pipeline,
    dataset: String,
    family: Family,
    row: usize,
    desired: usize,
) -> Result<ExplainResponse, ApiError> {
    let point = pipeline.data().row(row);
    let e = pipeline.explain(point, desired)?;
    let c = e.contrastive;
    let mutate_mask = mutate_mask(&c.shapley, desired);
    let cf = e.counterfactuals;
    Ok(ExplainResponse {
        dataset,
        model: family.key().to_string(),
        model_fingerprint: pipeline.model().fingerprint().to_string(),
        row,
        point: pipeline.raw().row(row).to_vec(),
        predicted: c.predicted,
        desired: c.desired,
        why_p: c.why_p,
        not_q: c.not_q,
        nl_why_p: c.nl_why_p,
        nl_not_q: c.nl_not_q,
        shapley: ShapleyView {
            phi: c.shapley.phi,
            base_values: c.shapley.base_values,
            method: c.shapley.method,
        },
        mutate_mask,
        counterfactuals: cf
            .as_ref()
            .map_or_else(Vec::new, |s| s.points.iter().map(|p| pipeline.to_raw(p)).collect()),
        neighbor_budget_used: cf.as_ref().map_or(0, |s| s.neighbor_budget_used),
        is_fallback: cf.as_ref().is_some_and(|s| s.is_fallback),
        fallback_point: cf.as_ref().and_then(|s| s.fallback_point.as_ref()).map(|p| pipeline.to_raw(p)),
        empty: cf.is_none(),
    })
}
