//! Bilinear resampling helpers over 8-bit RGB rasters.
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)` and is sampled at its
//! center `(i + 0.5, j + 0.5)`.

use crate::geometry::Point2D;
use image::{Rgb, RgbImage};

/// Out-of-bounds handling for [`sample_bilinear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Reads past the edge return the nearest edge pixel.
    Clamp,
    /// Reads past the edge return black.
    Zero,
}

fn texel(img: &RgbImage, x: i64, y: i64, border: Border) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let inside = x >= 0 && y >= 0 && x < w && y < h;
    if !inside && border == Border::Zero {
        return [0.0; 3];
    }
    let cx = x.clamp(0, w - 1) as u32;
    let cy = y.clamp(0, h - 1) as u32;
    let Rgb(px) = *img.get_pixel(cx, cy);
    [px[0] as f64, px[1] as f64, px[2] as f64]
}

/// Bilinear read at continuous image position `p`.
pub fn sample_bilinear(img: &RgbImage, p: Point2D, border: Border) -> [f64; 3] {
    let fx = p.x - 0.5;
    let fy = p.y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let c00 = texel(img, x0, y0, border);
    let c10 = texel(img, x0 + 1, y0, border);
    let c01 = texel(img, x0, y0 + 1, border);
    let c11 = texel(img, x0 + 1, y0 + 1, border);
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = c00[k] + (c10[k] - c00[k]) * tx;
        let bottom = c01[k] + (c11[k] - c01[k]) * tx;
        out[k] = top + (bottom - top) * ty;
    }
    out
}

pub fn to_rgb8(v: [f64; 3]) -> Rgb<u8> {
    Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
}

/// Fills a `width × height` raster by pulling each output pixel center
/// through `source_of` into `src`.
pub fn warp(
    src: &RgbImage,
    width: u32,
    height: u32,
    border: Border,
    source_of: impl Fn(Point2D) -> Point2D,
) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let center = Point2D::new(x as f64 + 0.5, y as f64 + 0.5);
        to_rgb8(sample_bilinear(src, source_of(center), border))
    })
}

/// Bilinear resize with pixel-center alignment and clamped borders.
pub fn resize(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    if src.width() == width && src.height() == height {
        return src.clone();
    }
    let sx = src.width() as f64 / width as f64;
    let sy = src.height() as f64 / height as f64;
    warp(src, width, height, Border::Clamp, |p| {
        Point2D::new(p.x * sx, p.y * sy)
    })
}

/// Luma (BT.601 weights) of one pixel.
pub fn luma(px: &Rgb<u8>) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}
