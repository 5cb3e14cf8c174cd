//! File adapters: raster decode/encode, sidecars and directory walks.

use crate::error::{CliError, Result};
use image::RgbImage;
use palmverify_core::geometry::{AnnotationFile, PalmAnnotation};
use std::fs;
use std::path::{Path, PathBuf};
use walkdir::WalkDir;

pub fn load_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| CliError::at(path, e))
}

/// Encodes by extension; anything but `.jpg`/`.jpeg` becomes PNG.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
    }
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => image::ImageFormat::Jpeg,
        _ => image::ImageFormat::Png,
    };
    img.save_with_format(path, format)
        .map_err(|e| CliError::at(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::at(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::at(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::at(path, e))
}

/// Reads a sidecar; `image_size` fills in a missing canvas size.
pub fn load_annotation(path: &Path, image_size: (u32, u32)) -> Result<PalmAnnotation> {
    let file = AnnotationFile::parse(&read_text(path)?).map_err(|e| CliError::at(path, e))?;
    file.to_annotation(Some(image_size))
        .map_err(|e| CliError::at(path, e))
}

pub fn is_image(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

/// Image files under `root` that have a sidecar, sorted by path.
pub fn annotated_images(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if !root.is_dir() {
        return Err(CliError::at(root, "not a directory"));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::at(root, e))?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_image(path) {
            continue;
        }
        let sidecar = AnnotationFile::path_for(path);
        if sidecar.is_file() {
            out.push((path.to_path_buf(), sidecar));
        }
    }
    Ok(out)
}
