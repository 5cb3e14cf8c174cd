//! Palmprint verification toolkit: keypoint-driven ROI extraction,
//! normalized-embedding matching, dataset tooling and evaluation metrics.

pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod report;

pub use geometry::{
    BoxClass, BoxSizing, BoxSpec, KeypointTriple, LocalFrame, PalmAnnotation, Point2D, RoiQuad,
};
pub use matching::{FeatureVector, MatchDecision, Outcome};
pub use pipeline::{DetectionBox, DetectorBackend, RoiImage, RoiPipeline};
