//! HTTP service: schema discovery, live predictions and bundle reloads.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use formrelax_core::pipeline::{load_bundle, ModelBundle};
use formrelax_core::relax::{predict_all, predict_requirement, Decision, PartialForm};
use formrelax_core::{BinaryClass, Error as CoreError, FormSchema};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::timeout::TimeoutLayer;
use tower_http::trace::TraceLayer;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub bundle_path: Option<PathBuf>,
    /// Bundles must have been trained for this schema when set.
    pub schema: Option<FormSchema>,
    pub request_timeout: Duration,
    /// Allowed origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            bundle_path: None,
            schema: None,
            request_timeout: Duration::from_secs(5),
            cors_origins: Vec::new(),
        }
    }
}

/// A bundle together with the load generation it was installed under.
#[derive(Debug)]
pub struct Loaded {
    pub generation: u64,
    pub bundle: ModelBundle,
}

#[derive(Debug, Default)]
pub struct AppState {
    current: RwLock<Option<Arc<Loaded>>>,
    generation: AtomicU64,
    bundle_path: Option<PathBuf>,
    schema: Option<FormSchema>,
}

impl AppState {
    pub fn new(bundle_path: Option<PathBuf>, schema: Option<FormSchema>) -> Self {
        AppState {
            bundle_path,
            schema,
            ..Default::default()
        }
    }

    pub fn current(&self) -> Option<Arc<Loaded>> {
        self.current.read().expect("state lock").clone()
    }

    /// Installs `bundle` unless its schema differs from the pinned or the
    /// currently served one. Returns the new generation.
    pub fn install(&self, bundle: ModelBundle) -> Result<u64, ApiError> {
        let mut slot = self.current.write().expect("state lock");
        let expected = self
            .schema
            .as_ref()
            .map(FormSchema::hash)
            .or_else(|| slot.as_ref().map(|l| l.bundle.schema_hash.clone()));
        if let Some(expected) = expected {
            if expected != bundle.schema_hash {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!(
                        "bundle schema {} does not match served schema {expected}",
                        bundle.schema_hash
                    ),
                ));
            }
        }
        let generation = self.generation.fetch_add(1, Ordering::SeqCst) + 1;
        *slot = Some(Arc::new(Loaded { generation, bundle }));
        Ok(generation)
    }

    pub fn reload(&self) -> Result<u64, ApiError> {
        let path = self
            .bundle_path
            .as_ref()
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "service has no bundle path"))?;
        let bundle = load_bundle(path, None).map_err(|e| match e {
            CoreError::SchemaMismatch { .. } => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, error_chain(&other)),
        })?;
        self.install(bundle)
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        out.push_str(": ");
        out.push_str(&s.to_string());
        cur = s.source();
    }
    out
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::UnknownTarget(_) => StatusCode::NOT_FOUND,
            CoreError::UnknownColumn(_) | CoreError::TargetFilled(_) => StatusCode::BAD_REQUEST,
            CoreError::SchemaMismatch { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub filled: BTreeMap<String, String>,
    /// Defaults to every modelled field that is not filled.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedField {
    pub target: String,
    pub class: BinaryClass,
    pub probability: f64,
    pub theta: f64,
    pub endorsed: bool,
    pub final_required: bool,
    pub latency_ms: f64,
    #[serde(default)]
    pub no_model: bool,
}

impl From<Decision> for PredictedField {
    fn from(d: Decision) -> Self {
        PredictedField {
            target: d.target,
            class: d.predicted_class,
            probability: d.probability,
            theta: d.theta_used,
            endorsed: d.endorsed,
            final_required: d.final_required,
            latency_ms: d.latency.as_secs_f64() * 1e3,
            no_model: d.no_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    /// Load generation of the bundle that produced every decision.
    pub bundle_version: u64,
    pub decisions: Vec<PredictedField>,
}

fn loaded(state: &AppState) -> Result<Arc<Loaded>, ApiError> {
    state
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no bundle loaded"))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let cur = state.current();
    Json(json!({
        "status": "ok",
        "bundle_loaded": cur.is_some(),
        "bundle_version": cur.as_ref().map(|l| l.generation),
        "models": cur.as_ref().map_or(0, |l| l.bundle.models.len()),
    }))
}

async fn schema(State(state): State<Arc<AppState>>) -> Result<Json<FormSchema>, ApiError> {
    Ok(Json(loaded(&state)?.bundle.schema.clone()))
}

pub fn predict_on(loaded: &Loaded, req: PredictRequest) -> Result<PredictResponse, ApiError> {
    let form = PartialForm::new(req.filled);
    let bundle = &loaded.bundle;
    let decisions = match req.targets {
        None => predict_all(bundle, &form)?,
        Some(targets) => targets
            .iter()
            .map(|t| predict_requirement(bundle, &form, t))
            .collect::<Result<_, _>>()?,
    };
    Ok(PredictResponse {
        bundle_version: loaded.generation,
        decisions: decisions.into_iter().map(PredictedField::from).collect(),
    })
}

async fn predict(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let cur = loaded(&state)?;
    let res = tokio::task::spawn_blocking(move || predict_on(&cur, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(res))
}

async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.clone();
    let generation = tokio::task::spawn_blocking(move || s.reload())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let models = state.current().map_or(0, |l| l.bundle.models.len());
    tracing::info!(generation, models, "bundle reloaded");
    Ok(Json(
        json!({ "bundle_version": generation, "models": models }),
    ))
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.is_empty() || origins.iter().any(|o| o == "*") {
        layer.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(state: Arc<AppState>, cfg: &ServiceConfig) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/predict", post(predict))
        .route("/reload", post(reload))
        .with_state(state)
        .layer(TimeoutLayer::with_status_code(
            StatusCode::REQUEST_TIMEOUT,
            cfg.request_timeout,
        ))
        .layer(cors(&cfg.cors_origins))
        .layer(TraceLayer::new_for_http())
}

/// Loads the bundle (when a path is configured) and serves until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> anyhow::Result<()> {
    anyhow::ensure!(
        !cfg.request_timeout.is_zero(),
        "request timeout must be positive"
    );
    let state = Arc::new(AppState::new(cfg.bundle_path.clone(), cfg.schema.clone()));
    if cfg.bundle_path.is_some() {
        state.reload().map_err(|e| anyhow::anyhow!(e.message))?;
    }
    let app = router(state, &cfg);
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
