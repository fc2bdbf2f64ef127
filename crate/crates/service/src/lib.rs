//! HTTP service behind the interactive editor.
//!
//! Loads one training checkpoint and renders images from a latent seed and
//! per-level heatmap centers:
//!
//! - `GET /model/info` describes the loaded model,
//! - `POST /generate` renders an [`api::EditRequest`],
//! - `POST /reset` hands out a fresh seed and freshly sampled centers.
//!
//! Every route answers 503 until the checkpoint has finished loading. The
//! model is read-only; rendering runs on the blocking pool.

pub mod api;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use autograd::Tensor;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use eqgan::attention::{gradcam, normalize_max1, GradCamOptions};
use eqgan::heatmap::{level_sum, Coord2D, HeatmapPyramid, SpatialBatch, LEVEL_RESOLUTIONS};
use eqgan::imageio::{image_raster, map_raster, overlay_raster};
use eqgan::nets::tap_name;
use eqgan::trainer::{sample_latents, Snapshot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower_http::cors::{AllowOrigin, CorsLayer};

use api::{Center, ErrorBody, FieldError, GenerateResponse, ModelInfo, ResetResponse, MAX_RESET_SEED};

/// Blend strength of the attention overlays.
const OVERLAY_ALPHA: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Model(#[from] eqgan::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A loaded checkpoint and everything needed to render from it.
#[derive(Debug)]
pub struct Model {
    snapshot: Snapshot,
}

fn png_base64(raster: eqgan::imageio::Raster) -> eqgan::Result<String> {
    Ok(BASE64.encode(raster.encode_png(&[])?))
}

impl Model {
    pub fn load(path: &Path) -> Result<Model, ServiceError> {
        Ok(Model { snapshot: Snapshot::load(path)? })
    }

    pub fn from_snapshot(snapshot: Snapshot) -> Model {
        Model { snapshot }
    }

    pub fn info(&self) -> ModelInfo {
        let cfg = &self.snapshot.config;
        ModelInfo {
            base_res: cfg.base_res,
            channels: cfg.image_channels(),
            levels: LEVEL_RESOLUTIONS.len(),
            level_resolutions: LEVEL_RESOLUTIONS.to_vec(),
            counts: cfg.counts.to_vec(),
            var0: cfg.var0,
            coord_bound: api::COORD_BOUND,
            conditioning: serde_json::to_value(cfg.sel_variant)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default(),
            step: self.snapshot.step,
            config_hash: cfg.hash(),
            checkpoint_hash: self.snapshot.file_hash.clone(),
        }
    }

    /// Latent code for `seed`: one standard-normal draw per dimension from
    /// a ChaCha8 stream seeded with `seed`.
    pub fn latent(&self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_latents(1, self.snapshot.config.latent_dim, &mut rng)
    }

    /// The generated image `[1, C, res, res]` for a seed and validated
    /// centers.
    pub fn image(&self, seed: u64, centers: &[Vec<Coord2D>]) -> eqgan::Result<(Tensor, HeatmapPyramid)> {
        let cfg = &self.snapshot.config;
        let pyramid = HeatmapPyramid::from_centers(cfg.base_res, cfg.var0, centers.to_vec())?;
        let spatial = cfg
            .uses_heatmaps()
            .then(|| SpatialBatch::from_pyramids(std::slice::from_ref(&pyramid)))
            .transpose()?;
        let image = self.snapshot.generate(&self.latent(seed), spatial.as_ref())?;
        Ok((image, pyramid))
    }

    pub fn render(&self, seed: u64, centers: &[Vec<Coord2D>], overlays: bool) -> eqgan::Result<GenerateResponse> {
        let cfg = &self.snapshot.config;
        let (c, res) = (cfg.image_channels(), cfg.base_res);
        let (image, pyramid) = self.image(seed, centers)?;
        let heatmaps = pyramid
            .levels
            .iter()
            .map(|level| {
                let clipped: Vec<f64> = level_sum(level).iter().map(|v| v.clamp(0.0, 1.0)).collect();
                png_base64(map_raster(&clipped, level.resolution, (res / level.resolution).max(1)))
            })
            .collect::<eqgan::Result<Vec<_>>>()?;
        let attn = if overlays {
            let taps: Vec<String> = LEVEL_RESOLUTIONS.iter().map(|&r| tap_name(r)).collect();
            let refs: Vec<&str> = taps.iter().map(String::as_str).collect();
            let maps = gradcam(&self.snapshot.d, &image, &refs, GradCamOptions::default())?;
            let pngs = maps
                .iter()
                .zip(LEVEL_RESOLUTIONS)
                .map(|(m, r)| png_base64(overlay_raster(image.data(), c, res, normalize_max1(m).data(), r, OVERLAY_ALPHA)?))
                .collect::<eqgan::Result<Vec<_>>>()?;
            Some(pngs)
        } else {
            None
        };
        Ok(GenerateResponse {
            seed,
            centers: centers.iter().map(|l| l.iter().map(|&p| Center::from(p)).collect()).collect(),
            image: png_base64(image_raster(image.data(), c, res)?)?,
            heatmaps,
            attn,
            checkpoint_hash: self.snapshot.file_hash.clone(),
        })
    }

    /// Centers of the pyramid the training sampler draws for `seed`.
    pub fn default_centers(&self, seed: u64) -> eqgan::Result<Vec<Vec<Center>>> {
        let cfg = &self.snapshot.config;
        let p = HeatmapPyramid::sample_seeded(cfg.base_res, &cfg.heatmap_spec(), seed)?;
        Ok(p.centers().into_iter().map(|l| l.into_iter().map(Center::from).collect()).collect())
    }
}

/// Shared handler state: the model slot (empty while loading) and the
/// generator of `/reset` seeds.
#[derive(Clone)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<Model>>>>,
    seeds: Arc<Mutex<ChaCha8Rng>>,
}

impl AppState {
    /// No model yet. `/reset` seeds come from `reset_seed`, or from OS
    /// entropy when `None`.
    pub fn empty(reset_seed: Option<u64>) -> AppState {
        let rng = match reset_seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_entropy(),
        };
        AppState { model: Arc::new(RwLock::new(None)), seeds: Arc::new(Mutex::new(rng)) }
    }

    pub fn with_model(model: Model, reset_seed: Option<u64>) -> AppState {
        let state = AppState::empty(reset_seed);
        state.install(model);
        state
    }

    pub fn install(&self, model: Model) {
        *self.model.write().expect("model lock poisoned") = Some(Arc::new(model));
    }

    #[allow(clippy::result_large_err)]
    fn model(&self) -> Result<Arc<Model>, Response> {
        self.model
            .read()
            .expect("model lock poisoned")
            .clone()
            .ok_or_else(|| error_response(StatusCode::SERVICE_UNAVAILABLE, "model is still loading", None))
    }
}

fn error_response(status: StatusCode, message: impl Into<String>, field: Option<String>) -> Response {
    (status, Json(ErrorBody { error: message.into(), field })).into_response()
}

fn bad_request(e: FieldError) -> Response {
    error_response(StatusCode::BAD_REQUEST, e.message, Some(e.field))
}

fn internal(e: impl std::fmt::Display) -> Response {
    error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None)
}

async fn model_info(State(state): State<AppState>) -> Response {
    match state.model() {
        Ok(m) => Json(m.info()).into_response(),
        Err(r) => r,
    }
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Response {
    let model = match state.model() {
        Ok(m) => m,
        Err(r) => return r,
    };
    let req = match api::parse_request(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    let centers = match api::validate_centers(&req.centers) {
        Ok(c) => c,
        Err(e) => return bad_request(e),
    };
    let job = tokio::task::spawn_blocking(move || model.render(req.seed, &centers, req.include_overlays));
    match job.await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn reset(State(state): State<AppState>) -> Response {
    let model = match state.model() {
        Ok(m) => m,
        Err(r) => return r,
    };
    let seed = state.seeds.lock().expect("seed lock poisoned").gen_range(0..=MAX_RESET_SEED);
    match model.default_centers(seed) {
        Ok(centers) => Json(ResetResponse { seed, centers }).into_response(),
        Err(e) => internal(e),
    }
}

/// CORS policy: the given origins, or any origin when the list is empty.
pub fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.is_empty() {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(state: AppState, cors: CorsLayer) -> Router {
    Router::new()
        .route("/model/info", get(model_info))
        .route("/generate", post(generate))
        .route("/reset", post(reset))
        .layer(cors)
        .with_state(state)
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub checkpoint: PathBuf,
    pub addr: SocketAddr,
    /// Allowed CORS origins; empty allows any.
    pub origins: Vec<String>,
    pub reset_seed: Option<u64>,
}

/// Binds, reports the bound address through `on_bound`, loads the
/// checkpoint in the background and serves until the task is dropped.
/// Load failures end the server with an error.
pub async fn serve(opts: ServeOptions, on_bound: impl FnOnce(SocketAddr)) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    on_bound(listener.local_addr()?);
    let state = AppState::empty(opts.reset_seed);
    let app = router(state.clone(), cors(&opts.origins));
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    let path = opts.checkpoint.clone();
    let model = tokio::task::spawn_blocking(move || Model::load(&path))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))??;
    log::info!("loaded {}", opts.checkpoint.display());
    state.install(model);
    server.await.map_err(|e| std::io::Error::other(e.to_string()))??;
    Ok(())
}
