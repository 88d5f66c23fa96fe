//! JSON-over-HTTP front end for a trained checkpoint.
//!
//! Routes: `GET /sprites`, `POST /swap`, `POST /interpolate`, `GET /health`
//! and `GET /image/{id}` (raw PNG). Images travel as base64 PNG strings.

mod catalog;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{Catalog, CatalogEntry};

use typeshift_core::eval::{interpolate_latents, interpolation_coefficients, ModelTag, PREVIEW_SIDE};
use typeshift_core::model::Params;
use typeshift_core::training::{checkpoint_hash, load_checkpoint};
use typeshift_core::types::parse_type_list;
use typeshift_core::{HsvImage, TypeVector, SIDE};

pub const DEFAULT_MAGNITUDE: f64 = 20.0;
pub const MAX_MAGNITUDE: f64 = 100.0;
pub const STEP_RANGE: std::ops::RangeInclusive<usize> = 2..=32;

pub struct LoadedModel {
    pub params: Params<f32>,
    pub tag: ModelTag,
    pub provenance: String,
    pub checkpoint_hash: String,
}

impl LoadedModel {
    pub fn load(path: &std::path::Path) -> anyhow::Result<LoadedModel> {
        let ckpt = load_checkpoint(path)?;
        anyhow::ensure!(
            ckpt.params.config.image_side == SIDE,
            "checkpoint expects {}x{} images; the service serves {SIDE}x{SIDE}",
            ckpt.params.config.image_side,
            ckpt.params.config.image_side
        );
        Ok(LoadedModel {
            tag: ModelTag::from_provenance(&ckpt.provenance),
            provenance: ckpt.provenance,
            params: ckpt.params,
            checkpoint_hash: checkpoint_hash(path)?,
        })
    }
}

pub struct AppState {
    pub catalog: Catalog,
    pub model: Option<LoadedModel>,
    pub started: Instant,
}

impl AppState {
    pub fn new(catalog: Catalog, model: Option<LoadedModel>) -> Arc<AppState> {
        Arc::new(AppState {
            catalog,
            model,
            started: Instant::now(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown sprite {0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("no model loaded")]
    NoModel,
    #[error("{0}")]
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::Invalid(r.body_text())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpriteSummary {
    pub id: String,
    pub name: String,
    pub types: Vec<String>,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapRequest {
    pub sprite_id: String,
    pub types: Vec<String>,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
}

fn default_magnitude() -> f64 {
    DEFAULT_MAGNITUDE
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapResponse {
    pub sprite_id: String,
    pub types: Vec<String>,
    pub magnitude: f64,
    /// Base64 PNG, 32x32.
    pub input_png: String,
    /// Base64 PNG, 32x32.
    pub output_png: String,
    /// Base64 PNG, output upscaled to 128x128 by nearest neighbour.
    pub preview_png: String,
    /// Euclidean norm of the latent mean.
    pub latent_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub sprite_id_a: String,
    pub sprite_id_b: String,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub sprite_id_a: String,
    pub sprite_id_b: String,
    pub coefficients: Vec<f32>,
    /// Base64 PNG frames, 32x32, from A to B.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_tag: Option<ModelTag>,
    pub provenance: Option<String>,
    pub checkpoint_hash: Option<String>,
    pub uptime_seconds: f64,
    pub catalog_size: usize,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sprites", get(list_sprites))
        .route("/swap", post(swap))
        .route("/interpolate", post(interpolate))
        .route("/health", get(health))
        .route("/image/{id}", get(image))
        .with_state(state)
}

async fn list_sprites(State(state): State<Arc<AppState>>) -> Json<Vec<SpriteSummary>> {
    Json(
        state
            .catalog
            .entries()
            .iter()
            .map(|e| SpriteSummary {
                id: e.id.clone(),
                name: e.name.clone(),
                types: e.types.iter().map(|t| t.name().to_string()).collect(),
                thumbnail_url: format!("/image/{}", e.id),
            })
            .collect(),
    )
}

async fn image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state.catalog.get(&id).ok_or(ApiError::NotFound(id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], entry.input_png.clone()).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let model = state.model.as_ref();
    Json(HealthResponse {
        status: "ok".into(),
        model_tag: model.map(|m| m.tag),
        provenance: model.map(|m| m.provenance.clone()),
        checkpoint_hash: model.map(|m| m.checkpoint_hash.clone()),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
        catalog_size: state.catalog.len(),
    })
}

fn png_base64(image: &HsvImage, upscale: usize) -> Result<String, ApiError> {
    let rgb = image.to_rgb();
    let rgb = if upscale > 1 { rgb.upscale_nearest(upscale) } else { rgb };
    let bytes = rgb.to_png_bytes().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(BASE64.encode(bytes))
}

/// Runs blocking model work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &Arc<AppState>,
    f: impl FnOnce(&AppState, &LoadedModel) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    if state.model.is_none() {
        return Err(ApiError::NoModel);
    }
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state, state.model.as_ref().expect("checked above")))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn swap(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SwapRequest>, JsonRejection>,
) -> Result<Json<SwapResponse>, ApiError> {
    let Json(req) = body?;
    let types = parse_type_list(&req.types).map_err(|e| ApiError::Invalid(e.to_string()))?;
    if !(req.magnitude > 0.0 && req.magnitude <= MAX_MAGNITUDE) {
        return Err(ApiError::Invalid(format!(
            "magnitude must be in (0, {MAX_MAGNITUDE}], got {}",
            req.magnitude
        )));
    }
    if state.catalog.get(&req.sprite_id).is_none() {
        return Err(ApiError::NotFound(req.sprite_id));
    }
    let vector = TypeVector::encode(&types, req.magnitude).map_err(|e| ApiError::Invalid(e.to_string()))?;
    blocking(&state, move |state, model| {
        let entry = state.catalog.get(&req.sprite_id).expect("checked above");
        let internal = |e: typeshift_core::model::ModelError| ApiError::Internal(e.to_string());
        let code = model.params.encode(&[&entry.input], &[vector], None).map_err(internal)?.remove(0);
        let output = model.params.decode(&[code.mean.clone()]).map_err(internal)?.remove(0).image;
        let latent_norm = code.mean.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        Ok(SwapResponse {
            types: types.iter().map(|t| t.name().to_string()).collect(),
            magnitude: req.magnitude,
            input_png: BASE64.encode(&entry.input_png),
            output_png: png_base64(&output, 1)?,
            preview_png: png_base64(&output, PREVIEW_SIDE / SIDE)?,
            latent_norm,
            sprite_id: req.sprite_id,
        })
    })
    .await
    .map(Json)
}

async fn interpolate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<InterpolateRequest>, JsonRejection>,
) -> Result<Json<InterpolateResponse>, ApiError> {
    let Json(req) = body?;
    if !STEP_RANGE.contains(&req.steps) {
        return Err(ApiError::Invalid(format!(
            "steps must be in [{}, {}], got {}",
            STEP_RANGE.start(),
            STEP_RANGE.end(),
            req.steps
        )));
    }
    if req.sprite_id_a == req.sprite_id_b {
        return Err(ApiError::Invalid("the two sprites must differ".into()));
    }
    for id in [&req.sprite_id_a, &req.sprite_id_b] {
        if state.catalog.get(id).is_none() {
            return Err(ApiError::NotFound(id.clone()));
        }
    }
    blocking(&state, move |state, model| {
        let a = state.catalog.get(&req.sprite_id_a).expect("checked above");
        let b = state.catalog.get(&req.sprite_id_b).expect("checked above");
        let unit = |e: &CatalogEntry| TypeVector::unit(&e.types).map_err(|e| ApiError::Internal(e.to_string()));
        let frames = interpolate_latents(&model.params, &a.input, unit(a)?, &b.input, unit(b)?, req.steps)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(InterpolateResponse {
            coefficients: interpolation_coefficients(req.steps),
            frames: frames.iter().map(|f| png_base64(f, 1)).collect::<Result<_, _>>()?,
            sprite_id_a: req.sprite_id_a,
            sprite_id_b: req.sprite_id_b,
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub checkpoint: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
}

pub fn build_state(config: &ServeConfig) -> anyhow::Result<Arc<AppState>> {
    let catalog = match &config.catalog {
        Some(path) => Catalog::load(path)?,
        None => Catalog::default(),
    };
    let model = config.checkpoint.as_deref().map(LoadedModel::load).transpose()?;
    Ok(AppState::new(catalog, model))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServeConfig) -> anyhow::Result<()> {
    let state = build_state(&config)?;
    let addr: SocketAddr = format!("{}:{}", config.host, config.port).parse()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(
        "serving {} sprites on http://{} (model: {})",
        state.catalog.len(),
        listener.local_addr()?,
        state.model.as_ref().map_or("none", |m| m.tag.name())
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
