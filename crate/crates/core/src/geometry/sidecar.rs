//! `<image-stem>.ann.json` annotation sidecars.
//!
//! ```json
//! {
//!   "p1": {"x": 120.0, "y": 260.0},
//!   "p2": {"x": 150.0, "y": 150.0},
//!   "p3": {"x": 200.0, "y": 140.0},
//!   "p4": {"x": 250.0, "y": 150.0},
//!   "hand": "r",
//!   "palm_side": "pos_normal",
//!   "image_width": 400,
//!   "image_height": 400
//! }
//! ```
//!
//! `p1`, `palm_side`, `image_width` and `image_height` are optional. When the
//! image size is missing the caller supplies it from the decoded image.

use super::{GeometryError, Hand, PalmAnnotation, PalmSide, Point2D, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SIDECAR_SUFFIX: &str = ".ann.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
}

impl From<PointRecord> for Point2D {
    fn from(p: PointRecord) -> Self {
        Point2D::new(p.x, p.y)
    }
}

impl From<Point2D> for PointRecord {
    fn from(p: Point2D) -> Self {
        PointRecord { x: p.x, y: p.y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<PointRecord>,
    pub p2: PointRecord,
    pub p3: PointRecord,
    pub p4: PointRecord,
    pub hand: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palm_side: Option<PalmSide>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<f64>,
}

impl AnnotationFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| GeometryError::InvalidAnnotation(format!("sidecar: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }

    /// Sidecar path for an image: `dir/stem.jpg` → `dir/stem.ann.json`.
    pub fn path_for(image: &Path) -> PathBuf {
        let stem = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        image.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"))
    }

    /// Builds a validated annotation; `fallback_size` is used when the file
    /// carries no image size.
    pub fn to_annotation(&self, fallback_size: Option<(u32, u32)>) -> Result<PalmAnnotation> {
        let hand = match self.hand.as_str() {
            "l" => Hand::Left,
            "r" => Hand::Right,
            other => {
                return Err(GeometryError::InvalidAnnotation(format!(
                    "hand must be \"l\" or \"r\", got {other:?}"
                )))
            }
        };
        let (w, h) = match (self.image_width, self.image_height, fallback_size) {
            (Some(w), Some(h), _) => (w, h),
            (_, _, Some((w, h))) => (w as f64, h as f64),
            _ => {
                return Err(GeometryError::InvalidAnnotation(
                    "image size missing from sidecar and not supplied".into(),
                ))
            }
        };
        PalmAnnotation::new(
            self.p1.map(Into::into),
            [self.p2.into(), self.p3.into(), self.p4.into()],
            w,
            h,
            hand,
            self.palm_side,
        )
    }

    pub fn from_annotation(ann: &PalmAnnotation) -> Self {
        let [p2, p3, p4] = ann.gaps();
        Self {
            p1: ann.thumb_gap().map(Into::into),
            p2: p2.into(),
            p3: p3.into(),
            p4: p4.into(),
            hand: ann.hand().code().to_string(),
            palm_side: ann.palm_side(),
            image_width: Some(ann.image_width()),
            image_height: Some(ann.image_height()),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Result<Self>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text))
    }
}
