//! HTTP front end: classify an uploaded clip and recommend the catalog songs
//! whose genre distributions are closest to it.
//!
//! Routes:
//! - `POST /classify` multipart upload (field `file`) → [`ClassifyResponse`]
//! - `GET /genres` → `{"genres": [...]}` in label order
//! - `GET /health` → 200 once the model and catalog are loaded, 503 before

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use genrenet_core::audio::{decode_wav_bytes, SAMPLE_RATE};
use genrenet_core::dataset::GENRES;
use genrenet_core::dsp::{encode_png, FeatureConfig, FeatureExtractor, SpectroKind};
use genrenet_core::models::{load_model, ModelCard, ModelGraph};
use genrenet_core::pipeline::{classify_clip, WindowMode};
use genrenet_core::recommend::{recommend, Catalog, Recommendation, Similarity};
use genrenet_core::CoreError;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Upper bound on the whole request body.
    pub max_upload_bytes: usize,
    pub window: WindowMode,
    pub k: usize,
    pub similarity: Similarity,
    /// Directory of static UI assets served for unmatched paths.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            window: WindowMode::Center,
            k: 5,
            similarity: Similarity::Cosine,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub probs: Vec<f64>,
    pub top_genre: String,
    pub recommendations: Vec<Recommendation>,
    pub spectrogram_png_base64: String,
}

/// A loaded model and catalog. Read-only once built.
pub struct Engine {
    pub model: ModelGraph,
    pub catalog: Catalog,
    pub kind: SpectroKind,
    extractor: FeatureExtractor,
}

impl Engine {
    pub fn new(model: ModelGraph, catalog: Catalog, kind: SpectroKind) -> Result<Self, CoreError> {
        if catalog.is_empty() {
            return Err(CoreError::EmptyCatalog);
        }
        if let Some(e) = catalog.entries.iter().find(|e| e.distribution.probs.len() != model.num_classes) {
            return Err(CoreError::Shape {
                op: "Engine::new",
                detail: format!("catalog song {} has {} classes, model has {}", e.song_id, e.distribution.probs.len(), model.num_classes),
            });
        }
        let extractor = FeatureExtractor::new(FeatureConfig::default(), SAMPLE_RATE)?;
        Ok(Self { model, catalog, kind, extractor })
    }

    /// Load a checkpoint (with its model card) and a catalog file. The image
    /// representation comes from the card's `repr` entry, defaulting to mel.
    pub fn load(checkpoint: &Path, catalog: &Path) -> Result<Self, CoreError> {
        let card = ModelCard::load(checkpoint)?;
        let kind = match card.extra.iter().find(|(k, _)| k == "repr") {
            Some((_, v)) => SpectroKind::parse(v)?,
            None => SpectroKind::Mel,
        };
        Self::new(load_model(checkpoint)?, Catalog::load(catalog)?, kind)
    }

    pub fn classify(&self, wav: &[u8], config: &ServiceConfig) -> Result<ClassifyResponse, CoreError> {
        let clip = decode_wav_bytes(wav, "upload")?;
        let result = classify_clip(&clip, &self.model, &self.extractor, self.kind, config.window)?;
        let recommendations = recommend(&result.distribution, &self.catalog, config.k, config.similarity)?;
        let png = encode_png(&result.image)?;
        Ok(ClassifyResponse {
            top_genre: result.distribution.top_genre().to_string(),
            probs: result.distribution.probs,
            recommendations,
            spectrogram_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        })
    }
}

enum Status {
    Loading,
    Ready(Arc<Engine>),
    Failed(String),
}

pub struct AppState {
    pub config: ServiceConfig,
    status: RwLock<Status>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { config, status: RwLock::new(Status::Loading) })
    }

    pub fn install(&self, engine: Engine) {
        *self.status.write().unwrap() = Status::Ready(Arc::new(engine));
    }

    pub fn fail(&self, reason: impl Into<String>) {
        *self.status.write().unwrap() = Status::Failed(reason.into());
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        match &*self.status.read().unwrap() {
            Status::Ready(e) => Some(e.clone()),
            _ => None,
        }
    }

    /// Load on a background thread so the server can answer `/health` meanwhile.
    pub fn load_in_background(self: &Arc<Self>, checkpoint: PathBuf, catalog: PathBuf) -> std::thread::JoinHandle<()> {
        let state = self.clone();
        std::thread::spawn(move || match Engine::load(&checkpoint, &catalog) {
            Ok(engine) => state.install(engine),
            Err(e) => {
                eprintln!("service: load failed [{}] {e}", e.category());
                state.fail(e.to_string());
            }
        })
    }
}

#[derive(Debug)]
enum ApiError {
    BadRequest(String),
    TooLarge(String),
    Unavailable,
    Internal(String),
}

static ERROR_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Identifier that ties a 500 response to the logged detail without revealing it.
fn opaque_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
    let mut z = nanos ^ ERROR_COUNTER.fetch_add(1, Ordering::Relaxed).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    format!("{:016x}", z ^ (z >> 31))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, json!({ "error": msg })),
            ApiError::TooLarge(msg) => (StatusCode::PAYLOAD_TOO_LARGE, json!({ "error": msg })),
            ApiError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, json!({ "error": "model not loaded" })),
            ApiError::Internal(detail) => {
                let id = opaque_id();
                eprintln!("service: internal error {id}: {detail}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": "internal error", "id": id }))
            }
        };
        (status, Json(body)).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e.category() {
            "audio" => ApiError::BadRequest(e.to_string()),
            _ => ApiError::Internal(format!("[{}] {e}", e.category())),
        }
    }
}

async fn upload_bytes(mut multipart: Multipart) -> Result<Vec<u8>, ApiError> {
    let part_err = |e: axum::extract::multipart::MultipartError| match e.status() {
        StatusCode::PAYLOAD_TOO_LARGE => ApiError::TooLarge(e.body_text()),
        _ => ApiError::BadRequest(e.body_text()),
    };
    while let Some(field) = multipart.next_field().await.map_err(part_err)? {
        let wanted = matches!(field.name(), Some("file" | "audio")) || field.file_name().is_some();
        if wanted {
            return Ok(field.bytes().await.map_err(part_err)?.to_vec());
        }
    }
    Err(ApiError::BadRequest("missing audio file field \"file\"".into()))
}

async fn classify(State(state): State<Arc<AppState>>, multipart: Multipart) -> Result<Json<ClassifyResponse>, ApiError> {
    let engine = state.engine().ok_or(ApiError::Unavailable)?;
    let bytes = upload_bytes(multipart).await?;
    let config = state.config.clone();
    let response = tokio::task::spawn_blocking(move || engine.classify(&bytes, &config))
        .await
        .map_err(|e| ApiError::Internal(format!("classification task failed: {e}")))??;
    Ok(Json(response))
}

async fn genres() -> Json<serde_json::Value> {
    Json(json!({ "genres": GENRES }))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &*state.status.read().unwrap() {
        Status::Ready(e) => Json(json!({
            "status": "ok",
            "architecture": e.model.architecture.name(),
            "representation": e.kind.name(),
            "catalog_songs": e.catalog.len(),
        }))
        .into_response(),
        Status::Loading => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
        Status::Failed(reason) => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "failed", "error": reason }))).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    let static_dir = state.config.static_dir.clone();
    let mut app = Router::new()
        .route("/classify", post(classify).layer(DefaultBodyLimit::max(limit)))
        .route("/genres", get(genres))
        .route("/health", get(health));
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(CorsLayer::permissive()).with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
