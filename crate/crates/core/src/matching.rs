//! Embedding, L2 normalization, inner-product scoring and the threshold
//! decision.

use crate::pipeline::{BackendError, Concurrency};
use crate::raster;
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_DIM: usize = 512;
/// Input raster side expected by embedders.
pub const EMBED_INPUT: u32 = 224;
/// Operating threshold calibrated at FAR = 1e-4.
pub const DEFAULT_THRESHOLD: f64 = 0.5014;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("feature vector has {0} components, expected {FEATURE_DIM}")]
    WrongDimension(usize),
    #[error("feature vector has zero norm")]
    ZeroVector,
    #[error("feature vector is not normalized")]
    NotNormalized,
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("ROI raster must be square and non-empty, got {0}x{1}")]
    BadRoi(u32, u32),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A 512-component palmprint embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureVector {
    /// Wraps raw (un-normalized) values.
    pub fn new(values: Vec<f64>) -> Result<Self, MatchError> {
        if values.len() != FEATURE_DIM {
            return Err(MatchError::WrongDimension(values.len()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Wraps values that are already unit length (within 1e-6), e.g. read
    /// back from a template store.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, MatchError> {
        let mut f = Self::new(values)?;
        if (l2_norm(&f.values) - 1.0).abs() > 1e-6 {
            return Err(MatchError::NotNormalized);
        }
        f.normalized = true;
        Ok(f)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Values rounded to single precision, the storage format.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|v| *v as f32).collect()
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Embedding model: 224×224 RGB raster in, 512 raw values out.
pub trait EmbedderBackend: Send + Sync {
    fn embed(&self, roi: &RgbImage) -> Result<Vec<f64>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

impl<T: EmbedderBackend + ?Sized> EmbedderBackend for std::sync::Arc<T> {
    fn embed(&self, roi: &RgbImage) -> Result<Vec<f64>, BackendError> {
        (**self).embed(roi)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Resizes the ROI to 224×224 if needed and runs the backend.
pub fn embed(roi: &RgbImage, embedder: &dyn EmbedderBackend) -> Result<FeatureVector, MatchError> {
    let (w, h) = roi.dimensions();
    if w == 0 || w != h {
        return Err(MatchError::BadRoi(w, h));
    }
    let values = if w == EMBED_INPUT {
        embedder.embed(roi)?
    } else {
        embedder.embed(&raster::resize(roi, EMBED_INPUT, EMBED_INPUT))?
    };
    FeatureVector::new(values)
}

pub fn normalize(f: &FeatureVector) -> Result<FeatureVector, MatchError> {
    let n = f.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(MatchError::ZeroVector);
    }
    Ok(FeatureVector {
        values: f.values.iter().map(|v| v / n).collect(),
        normalized: true,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of two unit vectors, clamped to [-1, 1].
pub fn score(f1: &FeatureVector, f2: &FeatureVector) -> Result<f64, MatchError> {
    if !(f1.normalized && f2.normalized) {
        return Err(MatchError::NotNormalized);
    }
    Ok(dot(&f1.values, &f2.values).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub score: f64,
    pub threshold: f64,
    pub outcome: Outcome,
}

/// Success iff `s >= t`.
pub fn decide(s: f64, t: f64) -> MatchDecision {
    MatchDecision {
        score: s,
        threshold: t,
        outcome: if s >= t {
            Outcome::Success
        } else {
            Outcome::Fail
        },
    }
}

pub fn verify_pair(
    roi1: &RgbImage,
    roi2: &RgbImage,
    embedder: &dyn EmbedderBackend,
    t: f64,
) -> Result<MatchDecision, MatchError> {
    let f1 = normalize(&embed(roi1, embedder)?)?;
    let f2 = normalize(&embed(roi2, embedder)?)?;
    Ok(decide(score(&f1, &f2)?, t))
}

/// Best-scoring gallery entry; the lowest index wins ties.
pub fn match_against_gallery(
    probe: &FeatureVector,
    gallery: &[FeatureVector],
) -> Result<(usize, f64), MatchError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gallery.iter().enumerate() {
        let s = score(probe, g)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or(MatchError::EmptyGallery)
}

/// Grid side used by [`StubEmbedder`].
pub const STUB_GRID: u32 = 16;

/// Deterministic test embedder: 16×16 block-averaged luma, mean removed,
/// multiplied by a fixed seeded Gaussian 512×256 matrix.
///
/// Constant rasters embed to the zero vector.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    projection: Vec<f64>,
}

impl StubEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (STUB_GRID * STUB_GRID) as usize;
        let projection = (0..FEATURE_DIM * cells)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { projection }
    }

    /// Mean-removed luma grid of a raster.
    pub fn grid(roi: &RgbImage) -> Vec<f64> {
        let (w, h) = roi.dimensions();
        let g = STUB_GRID as usize;
        let mut sums = vec![0.0; g * g];
        let mut counts = vec![0u32; g * g];
        for (x, y, px) in roi.enumerate_pixels() {
            let cx = (x as u64 * g as u64 / w as u64) as usize;
            let cy = (y as u64 * g as u64 / h as u64) as usize;
            sums[cy * g + cx] += raster::luma(px);
            counts[cy * g + cx] += 1;
        }
        let mut cells: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
            .collect();
        if cells.iter().all(|c| *c == cells[0]) {
            return vec![0.0; cells.len()];
        }
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        for c in &mut cells {
            *c -= mean;
        }
        cells
    }
}

impl EmbedderBackend for StubEmbedder {
    fn embed(&self, roi: &RgbImage) -> Result<Vec<f64>, BackendError> {
        if roi.width() == 0 || roi.height() == 0 {
            return Err(BackendError("empty raster".into()));
        }
        let grid = Self::grid(roi);
        Ok(self
            .projection
            .chunks_exact(grid.len())
            .map(|row| dot(row, &grid))
            .collect())
    }
}

pub fn stub_embedder(seed: u64) -> StubEmbedder {
    StubEmbedder::new(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn basis(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_DIM];
        v[i] = 1.0;
        v
    }

    fn unit(values: Vec<f64>) -> FeatureVector {
        normalize(&FeatureVector::new(values).unwrap()).unwrap()
    }

    fn noise(seed: u64) -> RgbImage {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(224, 224, |_, _| {
            Rgb([rng.random(), rng.random(), rng.random()])
        })
    }

    #[test]
    fn normalize_examples() {
        let mut v = vec![0.0; FEATURE_DIM];
        v[0] = 2.0;
        let n = normalize(&FeatureVector::new(v).unwrap()).unwrap();
        assert_eq!(n.values(), basis(0).as_slice());
        assert!(n.is_normalized());
        let again = normalize(&n).unwrap();
        for (a, b) in again.values().iter().zip(n.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let zero = FeatureVector::new(vec![0.0; FEATURE_DIM]).unwrap();
        assert_eq!(normalize(&zero), Err(MatchError::ZeroVector));
    }

    #[test]
    fn wrong_length_rejected() {
        assert_eq!(
            FeatureVector::new(vec![1.0; 3]),
            Err(MatchError::WrongDimension(3))
        );
    }

    #[test]
    fn score_examples() {
        let e0 = unit(basis(0));
        let e1 = unit(basis(1));
        let neg = unit(basis(0).iter().map(|v| -v).collect());
        assert_eq!(score(&e0, &e0).unwrap(), 1.0);
        assert_eq!(score(&e0, &e1).unwrap(), 0.0);
        assert_eq!(score(&e0, &neg).unwrap(), -1.0);
        let raw = FeatureVector::new(basis(0)).unwrap();
        assert_eq!(score(&raw, &e0), Err(MatchError::NotNormalized));
    }

    #[test]
    fn decision_boundary() {
        assert_eq!(decide(0.5014, 0.5014).outcome, Outcome::Success);
        assert_eq!(decide(0.5013, 0.5014).outcome, Outcome::Fail);
        assert_eq!(decide(1.0, 0.5014).outcome, Outcome::Success);
    }

    #[test]
    fn gallery_examples() {
        let gallery: Vec<_> = (0..4).map(|i| unit(basis(i))).collect();
        assert_eq!(
            match_against_gallery(&gallery[2], &gallery).unwrap(),
            (2, 1.0)
        );
        assert_eq!(
            match_against_gallery(&gallery[0], &[]),
            Err(MatchError::EmptyGallery)
        );

        // scores 0.2, 0.9, 0.9 against probe e0
        let mk = |s: f64| {
            let mut v = basis(0);
            v[0] = s;
            v[1] = (1.0 - s * s).sqrt();
            FeatureVector::from_unit(v).unwrap()
        };
        let gallery = [mk(0.2), mk(0.9), mk(0.9)];
        let (idx, s) = match_against_gallery(&unit(basis(0)), &gallery).unwrap();
        assert_eq!(idx, 1);
        assert!((s - 0.9).abs() < 1e-12);
    }

    #[test]
    fn stub_is_deterministic_and_sensitive() {
        let stub = StubEmbedder::new(3);
        let img = noise(1);
        let a = embed(&img, &stub).unwrap();
        assert_eq!(a.values().len(), FEATURE_DIM);
        assert_eq!(a, embed(&img, &stub).unwrap());
        assert!(!a.is_normalized());
        let mut tweaked = img.clone();
        let px = tweaked.get_pixel_mut(17, 5);
        px[0] = px[0].wrapping_add(1);
        assert_ne!(a, embed(&tweaked, &stub).unwrap());
    }

    #[test]
    fn small_roi_is_resized_first() {
        let stub = StubEmbedder::new(3);
        let small = RgbImage::from_fn(100, 100, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, 0]));
        let direct = stub.embed(&raster::resize(&small, 224, 224)).unwrap();
        assert_eq!(embed(&small, &stub).unwrap().values(), direct.as_slice());
        let wide = RgbImage::new(10, 20);
        assert_eq!(embed(&wide, &stub), Err(MatchError::BadRoi(10, 20)));
    }

    #[test]
    fn verify_pair_examples() {
        let stub = StubEmbedder::new(9);
        let img = noise(4);
        let same = verify_pair(&img, &img, &stub, DEFAULT_THRESHOLD).unwrap();
        assert!((same.score - 1.0).abs() < 1e-12);
        assert_eq!(same.outcome, Outcome::Success);
        let other = verify_pair(&img, &noise(5), &stub, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(other.outcome, Outcome::Fail);
        let blank = RgbImage::new(224, 224);
        assert_eq!(
            verify_pair(&blank, &img, &stub, 0.5),
            Err(MatchError::ZeroVector)
        );
    }

    #[test]
    fn stored_precision_stays_unit() {
        let f = unit((0..FEATURE_DIM).map(|i| (i as f64 * 0.37).sin()).collect());
        let back: Vec<f64> = f.to_f32().into_iter().map(f64::from).collect();
        assert!(FeatureVector::from_unit(back).is_ok());
    }
}
