//! Detection-driven ROI extraction: detector → keypoints → frame → resampled
//! ROI raster.

use crate::geometry::{
    boxes_from_annotation, frame_from_triple, roi_quad, BoxClass, BoxSizing, BoxSpec,
    GeometryError, KeypointTriple, LocalFrame, PalmAnnotation, Point2D, RoiQuad,
};
use crate::raster::{self, Border};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const DEFAULT_CONF_MIN: f64 = 0.25;
/// ROI raster side fed to the embedder.
pub const DEFAULT_ROI_SIZE: u32 = 224;

/// One detector output box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub class_id: BoxClass,
    pub confidence: f64,
    pub center: Point2D,
    pub width: f64,
    pub height: f64,
}

impl DetectionBox {
    pub fn new(
        class_id: BoxClass,
        confidence: f64,
        center: Point2D,
        width: f64,
        height: f64,
    ) -> Result<Self, PipelineError> {
        let b = Self {
            class_id,
            confidence,
            center,
            width,
            height,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(PipelineError::InvalidDetection(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if !(self.width > 0.0 && self.height > 0.0) || !self.center.is_finite() {
            return Err(PipelineError::InvalidDetection(format!(
                "box {}x{} at {} is not a valid box",
                self.width, self.height, self.center
            )));
        }
        Ok(())
    }

    pub fn from_spec(spec: &BoxSpec, confidence: f64) -> Self {
        Self {
            class_id: spec.class_id,
            confidence,
            center: spec.center,
            width: spec.width,
            height: spec.height,
        }
    }
}

/// Whether a backend tolerates concurrent calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    SingleCaller,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("backend failure: {0}")]
pub struct BackendError(pub String);

/// Keypoint detector. Implementations must be deterministic for a fixed
/// configuration and input.
pub trait DetectorBackend: Send + Sync {
    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionBox>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<T: DetectorBackend + ?Sized> DetectorBackend for Arc<T> {
    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionBox>, BackendError> {
        (**self).detect(image)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Counts of surviving detections when keypoint selection gives up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incomplete {
    pub gap_centers: usize,
    pub palm_centers: usize,
}

impl Incomplete {
    pub fn missing(&self) -> Vec<BoxClass> {
        let mut out = Vec::new();
        if self.gap_centers < 2 {
            out.push(BoxClass::DoubleFingerGap);
        }
        if self.palm_centers == 0 {
            out.push(BoxClass::PalmCenter);
        }
        out
    }
}

impl fmt::Display for Incomplete {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .missing()
            .into_iter()
            .map(|c| match c {
                BoxClass::DoubleFingerGap => "double-finger-gap",
                BoxClass::PalmCenter => "palm-center",
            })
            .collect();
        write!(
            f,
            "missing {} ({} double-finger-gap, {} palm-center detections)",
            names.join(" and "),
            self.gap_centers,
            self.palm_centers
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("incomplete detection: {0}")]
    IncompleteDetection(Incomplete),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("confidence threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("empty image")]
    EmptyImage,
    #[error("output size must be positive")]
    InvalidOutputSize,
}

/// Index pair `(i, j)`, `i < j`, of the two farthest points. Ties keep the
/// first pair in `(i, j)` lexicographic order.
pub fn farthest_pair(points: &[Point2D]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = (points[i] - points[j]).dot(points[i] - points[j]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some(((i, j), d));
            }
        }
    }
    best.map(|(ij, _)| ij)
}

/// Picks A, B, C from detector output.
///
/// Boxes below `conf_min` are dropped. A and B are the farthest pair among
/// double-finger-gap centers; C is the most confident palm-center box
/// (first wins on ties).
pub fn select_keypoints(
    dets: &[DetectionBox],
    conf_min: f64,
) -> Result<KeypointTriple, PipelineError> {
    if !(0.0..=1.0).contains(&conf_min) {
        return Err(PipelineError::InvalidThreshold(conf_min));
    }
    let kept = dets.iter().filter(|d| d.confidence >= conf_min);
    let gaps: Vec<Point2D> = kept
        .clone()
        .filter(|d| d.class_id == BoxClass::DoubleFingerGap)
        .map(|d| d.center)
        .collect();
    let palm = kept.filter(|d| d.class_id == BoxClass::PalmCenter).fold(
        None::<&DetectionBox>,
        |best, d| match best {
            Some(b) if b.confidence >= d.confidence => Some(b),
            _ => Some(d),
        },
    );
    let palm_count = dets
        .iter()
        .filter(|d| d.confidence >= conf_min && d.class_id == BoxClass::PalmCenter)
        .count();
    let (Some((i, j)), Some(palm)) = (farthest_pair(&gaps), palm) else {
        return Err(PipelineError::IncompleteDetection(Incomplete {
            gap_centers: gaps.len(),
            palm_centers: palm_count,
        }));
    };
    Ok(KeypointTriple::new(gaps[i], gaps[j], palm.center)?)
}

/// Triple, frame and ROI square for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub triple: KeypointTriple,
    pub frame: LocalFrame,
    pub quad: RoiQuad,
}

impl Placement {
    pub fn from_triple(triple: KeypointTriple) -> Result<Self, PipelineError> {
        let frame = frame_from_triple(&triple)?;
        Ok(Self {
            triple,
            frame,
            quad: roi_quad(&frame),
        })
    }
}

/// A square ROI raster with the quad it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub pixels: RgbImage,
    pub source_id: Option<String>,
    pub quad: RoiQuad,
}

/// Resamples the ROI square of `quad` into an `out_size` raster.
pub fn sample_quad(image: &RgbImage, quad: &RoiQuad, out_size: u32) -> RgbImage {
    let [tl, tr, _, bl] = quad.corners;
    let across = tr - tl;
    let down = bl - tl;
    let n = out_size as f64;
    raster::warp(image, out_size, out_size, Border::Clamp, |p| {
        tl + across * (p.x / n) + down * (p.y / n)
    })
}

/// Cuts the ROI defined by `triple` out of `image`.
pub fn extract_roi(
    image: &RgbImage,
    triple: &KeypointTriple,
    out_size: u32,
) -> Result<RoiImage, PipelineError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(PipelineError::EmptyImage);
    }
    if out_size == 0 {
        return Err(PipelineError::InvalidOutputSize);
    }
    let placement = Placement::from_triple(*triple)?;
    Ok(RoiImage {
        pixels: sample_quad(image, &placement.quad, out_size),
        source_id: None,
        quad: placement.quad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub conf_min: f64,
    pub out_size: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            conf_min: DEFAULT_CONF_MIN,
            out_size: DEFAULT_ROI_SIZE,
        }
    }
}

/// Detector plus configuration. Calls into single-caller backends are
/// serialized.
pub struct RoiPipeline {
    detector: Arc<dyn DetectorBackend>,
    config: PipelineConfig,
    gate: Mutex<()>,
}

impl fmt::Debug for RoiPipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoiPipeline")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl RoiPipeline {
    pub fn new(detector: Arc<dyn DetectorBackend>, config: PipelineConfig) -> Self {
        Self {
            detector,
            config,
            gate: Mutex::new(()),
        }
    }

    pub fn config(&self) -> PipelineConfig {
        self.config
    }

    pub fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionBox>, PipelineError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(PipelineError::EmptyImage);
        }
        let dets = match self.detector.concurrency() {
            Concurrency::Concurrent => self.detector.detect(image)?,
            Concurrency::SingleCaller => {
                let _guard = self.gate.lock().unwrap_or_else(|e| e.into_inner());
                self.detector.detect(image)?
            }
        };
        for d in &dets {
            d.validate()?;
        }
        Ok(dets)
    }

    pub fn place(&self, dets: &[DetectionBox]) -> Result<Placement, PipelineError> {
        Placement::from_triple(select_keypoints(dets, self.config.conf_min)?)
    }

    pub fn run(&self, image: &RgbImage) -> Result<RoiImage, PipelineError> {
        run_pipeline(
            image,
            &self.detector_handle(),
            self.config.conf_min,
            self.config.out_size,
        )
    }

    fn detector_handle(&self) -> SerializedDetector<'_> {
        SerializedDetector(self)
    }
}

struct SerializedDetector<'a>(&'a RoiPipeline);

impl DetectorBackend for SerializedDetector<'_> {
    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionBox>, BackendError> {
        self.0.detect(image).map_err(|e| match e {
            PipelineError::Backend(b) => b,
            other => BackendError(other.to_string()),
        })
    }
}

/// Detector → keypoint selection → ROI extraction.
pub fn run_pipeline(
    image: &RgbImage,
    detector: &dyn DetectorBackend,
    conf_min: f64,
    out_size: u32,
) -> Result<RoiImage, PipelineError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(PipelineError::EmptyImage);
    }
    let dets = detector.detect(image)?;
    for d in &dets {
        d.validate()?;
    }
    let triple = select_keypoints(&dets, conf_min)?;
    extract_roi(image, &triple, out_size)
}

/// Test detector that replays ground-truth boxes, optionally with seeded
/// Gaussian jitter on the centers. Ignores the image.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    boxes: [BoxSpec; 3],
    jitter_sigma: f64,
    seed: u64,
}

impl OracleDetector {
    pub fn new(
        ann: &PalmAnnotation,
        sizing: &BoxSizing,
        jitter_sigma: f64,
        seed: u64,
    ) -> Result<Self, PipelineError> {
        if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
            return Err(PipelineError::InvalidDetection(format!(
                "jitter sigma {jitter_sigma} must be >= 0"
            )));
        }
        Ok(Self {
            boxes: boxes_from_annotation(ann, sizing)?,
            jitter_sigma,
            seed,
        })
    }

    pub fn boxes(&self) -> Vec<DetectionBox> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = (self.jitter_sigma > 0.0)
            .then(|| Normal::new(0.0, self.jitter_sigma).expect("sigma checked"));
        self.boxes
            .iter()
            .map(|b| {
                let mut d = DetectionBox::from_spec(b, 1.0);
                if let Some(n) = &noise {
                    d.center = d.center + Point2D::new(n.sample(&mut rng), n.sample(&mut rng));
                }
                d
            })
            .collect()
    }
}

impl DetectorBackend for OracleDetector {
    fn detect(&self, _image: &RgbImage) -> Result<Vec<DetectionBox>, BackendError> {
        Ok(self.boxes())
    }
}

/// Convenience constructor matching the oracle's functional signature.
pub fn oracle_detector(
    ann: &PalmAnnotation,
    sizing: &BoxSizing,
    jitter_sigma: f64,
    seed: u64,
) -> Result<OracleDetector, PipelineError> {
    OracleDetector::new(ann, sizing, jitter_sigma, seed)
}

/// Content key for a raster: dimensions plus pixel bytes.
pub fn raster_key(image: &RgbImage) -> u64 {
    let mut h = DefaultHasher::new();
    image.width().hash(&mut h);
    image.height().hash(&mut h);
    image.as_raw().hash(&mut h);
    h.finish()
}

/// Replays per-image detections keyed by raster content; unknown images
/// yield no detections. Backs the service and CLI when no trained detector
/// is available.
#[derive(Debug, Clone, Default)]
pub struct LookupDetector {
    table: HashMap<u64, Vec<DetectionBox>>,
}

impl LookupDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &RgbImage, dets: Vec<DetectionBox>) {
        self.table.insert(raster_key(image), dets);
    }

    /// Registers `image` with the zero-jitter oracle boxes of `ann`.
    pub fn insert_annotated(
        &mut self,
        image: &RgbImage,
        ann: &PalmAnnotation,
        sizing: &BoxSizing,
    ) -> Result<(), PipelineError> {
        let oracle = OracleDetector::new(ann, sizing, 0.0, 0)?;
        self.insert(image, oracle.boxes());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl DetectorBackend for LookupDetector {
    fn detect(&self, image: &RgbImage) -> Result<Vec<DetectionBox>, BackendError> {
        Ok(self
            .table
            .get(&raster_key(image))
            .cloned()
            .unwrap_or_default())
    }
}
