//! Detector backends the service can be started with.

use palmverify_core::geometry::{AnnotationFile, BoxSizing, GeometryError};
use palmverify_core::pipeline::{LookupDetector, PipelineError};
use std::path::{Path, PathBuf};
use thiserror::Error;
use walkdir::WalkDir;

#[derive(Debug, Error)]
pub enum BackendLoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {source}")]
    Boxes {
        path: PathBuf,
        #[source]
        source: PipelineError,
    },
    #[error("no annotated images under {0}")]
    Empty(PathBuf),
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

/// Registers every image under `root` that has an annotation sidecar with
/// its zero-jitter oracle boxes. Images without a sidecar are skipped.
pub fn oracle_from_dir(
    root: &Path,
    sizing: &BoxSizing,
) -> Result<LookupDetector, BackendLoadError> {
    let mut lookup = LookupDetector::new();
    let mut paths: Vec<PathBuf> = WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && is_image(e.path()))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    for path in paths {
        let sidecar = AnnotationFile::path_for(&path);
        if !sidecar.exists() {
            continue;
        }
        let file = AnnotationFile::load(&sidecar)
            .map_err(|source| BackendLoadError::Io {
                path: sidecar.clone(),
                source,
            })?
            .map_err(|source| BackendLoadError::Annotation {
                path: sidecar.clone(),
                source,
            })?;
        let image = image::open(&path)
            .map_err(|source| BackendLoadError::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let ann = file
            .to_annotation(Some(image.dimensions()))
            .map_err(|source| BackendLoadError::Annotation {
                path: sidecar.clone(),
                source,
            })?;
        lookup
            .insert_annotated(&image, &ann, sizing)
            .map_err(|source| BackendLoadError::Boxes { path, source })?;
    }
    if lookup.is_empty() {
        return Err(BackendLoadError::Empty(root.to_path_buf()));
    }
    Ok(lookup)
}
