//! Routes, request decoding and response documents.

use crate::store::{StoreError, TemplateStore, TEMPLATES_PER_PALM};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::RgbImage;
use palmverify_core::geometry::{BoxClass, Hand, KeypointTriple, LocalFrame, Point2D};
use palmverify_core::matching::{
    decide, embed, match_against_gallery, normalize, EmbedderBackend, FeatureVector, MatchError,
    Outcome,
};
use palmverify_core::pipeline::{
    Concurrency, DetectionBox, DetectorBackend, PipelineConfig, PipelineError, RoiPipeline,
};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};
use tokio::sync::RwLock;

pub const SUCCESS_MESSAGE: &str = "Palmprint Verification Success";
pub const FAIL_MESSAGE: &str = "Palmprint Verification Fail";
pub const RETRY_MESSAGE: &str = "Scan fail, please take photo again";

const MAX_UPLOAD: usize = 32 * 1024 * 1024;

/// Shared handler state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    pipeline: RoiPipeline,
    embedder: Arc<dyn EmbedderBackend>,
    embed_gate: Mutex<()>,
    threshold: f64,
    store: RwLock<TemplateStore>,
}

impl AppState {
    pub fn new(
        detector: Arc<dyn DetectorBackend>,
        embedder: Arc<dyn EmbedderBackend>,
        pipeline: PipelineConfig,
        threshold: f64,
        store: TemplateStore,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                pipeline: RoiPipeline::new(detector, pipeline),
                embedder,
                embed_gate: Mutex::new(()),
                threshold,
                store: RwLock::new(store),
            }),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    /// Pipeline, embedding and normalization for one probe image.
    fn feature(&self, image: &RgbImage) -> Result<FeatureVector, ApiError> {
        let roi = self.inner.pipeline.run(image).map_err(pipeline_error)?;
        let raw = match self.inner.embedder.concurrency() {
            Concurrency::Concurrent => embed(&roi.pixels, &self.inner.embedder),
            Concurrency::SingleCaller => {
                let _guard = self
                    .inner
                    .embed_gate
                    .lock()
                    .unwrap_or_else(|e| e.into_inner());
                embed(&roi.pixels, &self.inner.embedder)
            }
        };
        match raw.and_then(|f| normalize(&f)) {
            Ok(f) => Ok(f),
            // a featureless ROI is treated like a failed scan
            Err(MatchError::ZeroVector) => Err(ApiError::scan_failed(None)),
            Err(e) => Err(ApiError::internal(e.to_string())),
        }
    }

    async fn feature_blocking(&self, image: RgbImage) -> Result<FeatureVector, ApiError> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || state.feature(&image))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/detect", post(detect))
        .route("/enroll", post(enroll))
        .route("/verify", post(verify))
        .route("/enrollments/{user}", get(enrollments))
        .route("/enrollments/{user}/{palm}", delete(reset))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<BoxClass>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
                missing: Vec::new(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn scan_failed(missing: Option<Vec<BoxClass>>) -> Self {
        let mut e = Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "scan_failed",
            RETRY_MESSAGE,
        );
        e.body.missing = missing.unwrap_or_default();
        e
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::AlreadyComplete { .. } => {
                Self::new(StatusCode::CONFLICT, "already_complete", e.to_string())
            }
            StoreError::NotFound { .. } => {
                Self::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            other => Self::internal(other.to_string()),
        }
    }
}

fn pipeline_error(e: PipelineError) -> ApiError {
    match e {
        PipelineError::IncompleteDetection(inc) => ApiError::scan_failed(Some(inc.missing())),
        PipelineError::Geometry(_) => ApiError::scan_failed(None),
        other => ApiError::internal(other.to_string()),
    }
}

fn parse_palm(s: &str) -> Result<Hand, ApiError> {
    match s {
        "left" | "l" => Ok(Hand::Left),
        "right" | "r" => Ok(Hand::Right),
        other => Err(ApiError::bad_request(format!(
            "palm must be \"left\" or \"right\", got {other:?}"
        ))),
    }
}

/// Image upload with optional `user` and `palm` fields, sent either as
/// multipart form data or as JSON with a base64 `image`.
pub struct ImageRequest {
    pub user: Option<String>,
    pub palm: Option<String>,
    pub image: RgbImage,
}

#[derive(Deserialize)]
struct JsonUpload {
    user: Option<String>,
    palm: Option<String>,
    image: String,
}

impl ImageRequest {
    fn user(&self) -> Result<&str, ApiError> {
        match self.user.as_deref() {
            Some(u) if !u.trim().is_empty() => Ok(u),
            _ => Err(ApiError::bad_request("missing user")),
        }
    }

    fn palm(&self) -> Result<Hand, ApiError> {
        parse_palm(
            self.palm
                .as_deref()
                .ok_or_else(|| ApiError::bad_request("missing palm"))?,
        )
    }
}

fn decode_image(bytes: &[u8]) -> Result<RgbImage, ApiError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| ApiError::bad_request(format!("undecodable image: {e}")))
}

impl<S: Send + Sync> FromRequest<S> for ImageRequest {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let is_multipart = req
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("multipart/form-data"));
        if is_multipart {
            let mut form = Multipart::from_request(req, state)
                .await
                .map_err(|e| ApiError::bad_request(e.body_text()))?;
            let (mut user, mut palm, mut bytes) = (None, None, None);
            while let Some(field) = form
                .next_field()
                .await
                .map_err(|e| ApiError::bad_request(e.body_text()))?
            {
                let name = field.name().unwrap_or_default().to_owned();
                let data = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::bad_request(e.body_text()))?;
                match name.as_str() {
                    "user" => user = Some(String::from_utf8_lossy(&data).into_owned()),
                    "palm" => palm = Some(String::from_utf8_lossy(&data).into_owned()),
                    "image" => bytes = Some(data),
                    _ => {}
                }
            }
            let bytes = bytes.ok_or_else(|| ApiError::bad_request("missing image field"))?;
            return Ok(Self {
                user,
                palm,
                image: decode_image(&bytes)?,
            });
        }
        let Json(upload) = Json::<JsonUpload>::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        // accept data URLs as produced by browser canvases
        let encoded = match upload.image.split_once(";base64,") {
            Some((prefix, rest)) if prefix.starts_with("data:") => rest,
            _ => upload.image.as_str(),
        };
        let bytes = B64
            .decode(encoded.trim())
            .map_err(|e| ApiError::bad_request(format!("image is not base64: {e}")))?;
        Ok(Self {
            user: upload.user,
            palm: upload.palm,
            image: decode_image(&bytes)?,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub threshold: f64,
}

async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        threshold: state.threshold(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectStatus {
    Ok,
    Incomplete,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectResponse {
    pub status: DetectStatus,
    pub detections: Vec<DetectionBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<KeypointTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<LocalFrame>,
    /// ROI corners TL, TR, BR, BL in image pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad: Option<[Point2D; 4]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<BoxClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

async fn detect(
    State(state): State<AppState>,
    req: ImageRequest,
) -> Result<Json<DetectResponse>, ApiError> {
    let image = req.image;
    let worker = state.clone();
    let (detections, placement) = tokio::task::spawn_blocking(move || {
        let dets = worker.inner.pipeline.detect(&image)?;
        let placement = worker.inner.pipeline.place(&dets);
        Ok::<_, PipelineError>((dets, placement))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut resp = DetectResponse {
        status: DetectStatus::Ok,
        detections,
        triple: None,
        frame: None,
        quad: None,
        missing: Vec::new(),
        message: None,
    };
    match placement {
        Ok(p) => {
            resp.triple = Some(p.triple);
            resp.frame = Some(p.frame);
            resp.quad = Some(p.quad.corners);
        }
        Err(PipelineError::IncompleteDetection(inc)) => {
            resp.status = DetectStatus::Incomplete;
            resp.missing = inc.missing();
            resp.message = Some(inc.to_string());
        }
        Err(e @ PipelineError::Geometry(_)) => {
            resp.status = DetectStatus::Incomplete;
            resp.message = Some(e.to_string());
        }
        Err(e) => return Err(ApiError::internal(e.to_string())),
    }
    Ok(Json(resp))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub user: String,
    pub palm: Hand,
    pub count: usize,
}

async fn enroll(
    State(state): State<AppState>,
    req: ImageRequest,
) -> Result<Json<EnrollResponse>, ApiError> {
    let user = req.user()?.to_owned();
    let palm = req.palm()?;
    if state.inner.store.read().await.count(&user, palm) >= TEMPLATES_PER_PALM {
        return Err(StoreError::AlreadyComplete { user, palm }.into());
    }
    let feature = state.feature_blocking(req.image).await?;
    // the count is checked again under the write lock
    let count = state
        .inner
        .store
        .write()
        .await
        .append(&user, palm, &feature)?;
    Ok(Json(EnrollResponse { user, palm, count }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub user: String,
    pub score: f64,
    pub threshold: f64,
    pub outcome: Outcome,
    pub message: String,
    /// Palm holding the best-scoring template.
    pub palm: Hand,
}

async fn verify(
    State(state): State<AppState>,
    req: ImageRequest,
) -> Result<Json<VerifyResponse>, ApiError> {
    let user = req.user()?.to_owned();
    let templates: Vec<(Hand, FeatureVector)> = {
        let store = state.inner.store.read().await;
        if !store.has_user(&user) {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_user",
                format!("no enrollment for user {user}"),
            ));
        }
        store
            .complete_records(&user)
            .into_iter()
            .flat_map(|r| r.feature_vectors().into_iter().map(move |f| (r.palm, f)))
            .collect()
    };
    if templates.is_empty() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "enrollment_incomplete",
            format!("user {user} has no palm with {TEMPLATES_PER_PALM} templates"),
        ));
    }
    let probe = state.feature_blocking(req.image).await?;
    let gallery: Vec<FeatureVector> = templates.iter().map(|(_, f)| f.clone()).collect();
    let (best, score) =
        match_against_gallery(&probe, &gallery).map_err(|e| ApiError::internal(e.to_string()))?;
    let decision = decide(score, state.threshold());
    Ok(Json(VerifyResponse {
        user,
        score: decision.score,
        threshold: decision.threshold,
        outcome: decision.outcome,
        message: match decision.outcome {
            Outcome::Success => SUCCESS_MESSAGE,
            Outcome::Fail => FAIL_MESSAGE,
        }
        .into(),
        palm: templates[best].0,
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct EnrollmentCounts {
    pub user: String,
    pub left: usize,
    pub right: usize,
}

async fn enrollments(
    State(state): State<AppState>,
    Path(user): Path<String>,
) -> Json<EnrollmentCounts> {
    let store = state.inner.store.read().await;
    Json(EnrollmentCounts {
        left: store.count(&user, Hand::Left),
        right: store.count(&user, Hand::Right),
        user,
    })
}

async fn reset(
    State(state): State<AppState>,
    Path((user, palm)): Path<(String, String)>,
) -> Result<Json<EnrollResponse>, ApiError> {
    let palm = parse_palm(&palm)?;
    state.inner.store.write().await.reset(&user, palm)?;
    Ok(Json(EnrollResponse {
        user,
        palm,
        count: 0,
    }))
}
