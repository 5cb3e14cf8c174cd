//! Palm geometry: keypoints derived from finger-gap annotations, the
//! palm-anchored coordinate frame, the ROI square and ground-truth boxes.
//!
//! Coordinates are image pixels with x to the right and y downward.
//! "Clockwise" is meant as seen on screen, so the frame's X axis is the
//! Y axis turned a quarter-turn clockwise: `x = (-y.y, y.x)`.

mod sidecar;

pub use sidecar::{AnnotationFile, PointRecord, SIDECAR_SUFFIX};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

/// Distance from the frame origin to the ROI center, in units of `‖AB‖`.
pub const ROI_CENTER_OFFSET: f64 = 1.5;
/// ROI side length in units of `‖AB‖`.
pub const ROI_SIDE: f64 = 2.5;
/// Default augmentation canvas side; matches the 416×416 detector input.
pub const DEFAULT_CANVAS: u32 = 416;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate annotation: {0}")]
    DegenerateAnnotation(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("degenerate keypoint triple: {0}")]
    DegenerateTriple(String),
    #[error("invalid box sizing: alpha={alpha}, beta={beta} (both must be > 0)")]
    InvalidSizing { alpha: f64, beta: f64 },
    #[error("rotated point {name} at ({x:.3}, {y:.3}) leaves the {size}x{size} canvas")]
    PointOutOfCanvas {
        name: &'static str,
        x: f64,
        y: f64,
        size: u32,
    },
    #[error("invalid canvas size {0}")]
    InvalidCanvas(u32),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// A point (or displacement) in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Self) -> Self {
        Self::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    /// Quarter-turn clockwise on screen (y downward).
    pub fn rotate_cw90(self) -> Self {
        Self::new(-self.y, self.x)
    }
}

impl Add for Point2D {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2D {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2D {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2D {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn code(self) -> char {
        match self {
            Hand::Left => 'l',
            Hand::Right => 'r',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'l' => Some(Hand::Left),
            'r' => Some(Hand::Right),
            _ => None,
        }
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hand::Left => "left",
            Hand::Right => "right",
        })
    }
}

/// Which side of the directed line A→B the palm lies on, when no
/// thumb-gap point is available.
///
/// The positive normal of A→B is `d.rotate_cw90()` with `d = B - A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PalmSide {
    #[serde(rename = "pos_normal")]
    PositiveNormal,
    #[serde(rename = "neg_normal")]
    NegativeNormal,
}

/// Ground-truth finger-gap points for one palm image.
///
/// `gaps` holds P2, P3, P4 in anatomical order; `thumb_gap` is P1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalmAnnotation {
    thumb_gap: Option<Point2D>,
    gaps: [Point2D; 3],
    image_width: f64,
    image_height: f64,
    hand: Hand,
    palm_side: Option<PalmSide>,
}

impl PalmAnnotation {
    pub fn new(
        thumb_gap: Option<Point2D>,
        gaps: [Point2D; 3],
        image_width: f64,
        image_height: f64,
        hand: Hand,
        palm_side: Option<PalmSide>,
    ) -> Result<Self> {
        if !(image_width > 0.0 && image_height > 0.0)
            || !image_width.is_finite()
            || !image_height.is_finite()
        {
            return Err(GeometryError::InvalidAnnotation(format!(
                "image size {image_width}x{image_height} must be positive and finite"
            )));
        }
        let named = [("P2", gaps[0]), ("P3", gaps[1]), ("P4", gaps[2])];
        let all = named.iter().copied().chain(thumb_gap.map(|p| ("P1", p)));
        for (name, p) in all {
            if !p.is_finite() {
                return Err(GeometryError::InvalidAnnotation(format!(
                    "{name} has non-finite coordinates"
                )));
            }
            if p.x < 0.0 || p.y < 0.0 || p.x > image_width || p.y > image_height {
                return Err(GeometryError::InvalidAnnotation(format!(
                    "{name} {p} outside the {image_width}x{image_height} image"
                )));
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                if gaps[i] == gaps[j] {
                    return Err(GeometryError::InvalidAnnotation(format!(
                        "{} and {} coincide at {}",
                        named[i].0, named[j].0, gaps[i]
                    )));
                }
            }
        }
        Ok(Self {
            thumb_gap,
            gaps,
            image_width,
            image_height,
            hand,
            palm_side,
        })
    }

    pub fn thumb_gap(&self) -> Option<Point2D> {
        self.thumb_gap
    }

    pub fn gaps(&self) -> [Point2D; 3] {
        self.gaps
    }

    pub fn image_width(&self) -> f64 {
        self.image_width
    }

    pub fn image_height(&self) -> f64 {
        self.image_height
    }

    pub fn hand(&self) -> Hand {
        self.hand
    }

    pub fn palm_side(&self) -> Option<PalmSide> {
        self.palm_side
    }

    /// Applies `f` to every point, keeping hand and palm-side flag.
    ///
    /// `f` must preserve orientation for the palm-side flag to stay valid.
    pub fn map_points(
        &self,
        width: f64,
        height: f64,
        mut f: impl FnMut(Point2D) -> Point2D,
    ) -> Result<Self> {
        let gaps = [f(self.gaps[0]), f(self.gaps[1]), f(self.gaps[2])];
        let thumb = self.thumb_gap.map(&mut f);
        Self::new(thumb, gaps, width, height, self.hand, self.palm_side)
    }
}

/// The three detection keypoints: A and B (double-finger-gap centers) and
/// C (palm center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointTriple {
    pub a: Point2D,
    pub b: Point2D,
    pub c: Point2D,
}

impl KeypointTriple {
    pub fn new(a: Point2D, b: Point2D, c: Point2D) -> Result<Self> {
        let t = Self { a, b, c };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.c.is_finite()) {
            return Err(GeometryError::DegenerateTriple(
                "non-finite keypoint".into(),
            ));
        }
        if self.a == self.b {
            return Err(GeometryError::DegenerateTriple(format!(
                "A and B coincide at {}",
                self.a
            )));
        }
        if (self.b - self.a).cross(self.c - self.a) == 0.0 {
            return Err(GeometryError::DegenerateTriple(format!(
                "C {} lies on line AB",
                self.c
            )));
        }
        Ok(())
    }

    /// ‖AB‖
    pub fn unit(&self) -> f64 {
        self.a.distance(self.b)
    }
}

/// Palm-anchored coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: Point2D,
    pub x_axis: Point2D,
    pub y_axis: Point2D,
    /// `‖AB‖` in pixels.
    pub unit: f64,
}

impl LocalFrame {
    /// Image position of the point with frame coordinates `(u, v)` given in
    /// multiples of `unit`.
    pub fn to_image(&self, u: f64, v: f64) -> Point2D {
        self.origin + self.x_axis * (u * self.unit) + self.y_axis * (v * self.unit)
    }

    /// Frame coordinates (in multiples of `unit`) of an image point.
    pub fn to_local(&self, p: Point2D) -> Point2D {
        let d = p - self.origin;
        Point2D::new(
            d.dot(self.x_axis) / self.unit,
            d.dot(self.y_axis) / self.unit,
        )
    }
}

/// The ROI square. Corners run top-left, top-right, bottom-right,
/// bottom-left as seen in the local frame, where "top" is the finger side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiQuad {
    pub corners: [Point2D; 4],
    pub side: f64,
}

impl RoiQuad {
    pub fn center(&self) -> Point2D {
        self.corners[0].midpoint(self.corners[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BoxClass {
    DoubleFingerGap = 0,
    PalmCenter = 1,
}

impl BoxClass {
    pub const ALL: [BoxClass; 2] = [BoxClass::DoubleFingerGap, BoxClass::PalmCenter];

    pub fn id(self) -> u8 {
        self as u8
    }
}

impl From<BoxClass> for u8 {
    fn from(c: BoxClass) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for BoxClass {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(BoxClass::DoubleFingerGap),
            1 => Ok(BoxClass::PalmCenter),
            other => Err(format!("unknown box class {other}")),
        }
    }
}

/// Axis-aligned ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub class_id: BoxClass,
    pub center: Point2D,
    pub width: f64,
    pub height: f64,
}

/// Box side multipliers for the two detection classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSizing {
    alpha: f64,
    beta: f64,
}

impl BoxSizing {
    pub const DEFAULT_ALPHA: f64 = 1.5;
    pub const DEFAULT_BETA: f64 = 2.0;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(Self { alpha, beta })
        } else {
            Err(GeometryError::InvalidSizing { alpha, beta })
        }
    }

    /// Double-finger-gap side = alpha × gap-pair distance.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Palm-center side = beta × ‖AB‖.
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for BoxSizing {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            beta: Self::DEFAULT_BETA,
        }
    }
}

/// Unit normal of the directed line a→b, `(b - a).rotate_cw90() / ‖b - a‖`.
fn unit_normal(a: Point2D, b: Point2D) -> Point2D {
    let d = b - a;
    d.rotate_cw90() * (1.0 / d.norm())
}

/// Derives A, B and C from an annotation.
///
/// A and B are the midpoints of P2P3 and P3P4; C sits `1.5·‖AB‖` from their
/// midpoint, perpendicular to AB, on the palm side (the side holding P1, or
/// the annotation's explicit palm-side flag).
pub fn derive_triple(ann: &PalmAnnotation) -> Result<KeypointTriple> {
    let [p2, p3, p4] = ann.gaps;
    let a = p2.midpoint(p3);
    let b = p3.midpoint(p4);
    if a == b {
        return Err(GeometryError::DegenerateAnnotation(format!(
            "midpoints of P2P3 and P3P4 coincide at {a}"
        )));
    }
    let origin = a.midpoint(b);
    let unit = a.distance(b);
    let normal = unit_normal(a, b);

    let side = ann
        .thumb_gap
        .map(|p1| normal.dot(p1 - origin))
        .filter(|s| *s != 0.0);
    let toward_palm = match (side, ann.palm_side) {
        (Some(s), _) if s > 0.0 => normal,
        (Some(_), _) => -normal,
        (None, Some(PalmSide::PositiveNormal)) => normal,
        (None, Some(PalmSide::NegativeNormal)) => -normal,
        (None, None) => {
            return Err(GeometryError::DegenerateAnnotation(
                "palm side undeterminable: P1 absent or on line AB and no palm_side flag".into(),
            ))
        }
    };
    let c = origin + toward_palm * (ROI_CENTER_OFFSET * unit);
    KeypointTriple::new(a, b, c).map_err(|e| GeometryError::DegenerateAnnotation(e.to_string()))
}

/// Builds the local frame: origin at the midpoint of AB, Y pointing away
/// from C, X the clockwise quarter-turn of Y.
///
/// Independent of the A/B order.
pub fn frame_from_triple(t: &KeypointTriple) -> Result<LocalFrame> {
    t.validate()?;
    let origin = t.a.midpoint(t.b);
    let unit = t.unit();
    let normal = unit_normal(t.a, t.b);
    let s = normal.dot(t.c - origin);
    if s == 0.0 || !s.is_finite() {
        return Err(GeometryError::DegenerateTriple(format!(
            "C {} lies on line AB",
            t.c
        )));
    }
    let y_axis = if s > 0.0 { -normal } else { normal };
    Ok(LocalFrame {
        origin,
        x_axis: y_axis.rotate_cw90(),
        y_axis,
        unit,
    })
}

/// ROI square: centered `1.5·u` from the origin toward the palm, side `2.5·u`.
pub fn roi_quad(frame: &LocalFrame) -> RoiQuad {
    let u = frame.unit;
    let center = frame.origin - frame.y_axis * (ROI_CENTER_OFFSET * u);
    let h = ROI_SIDE * u / 2.0;
    let dx = frame.x_axis * h;
    let dy = frame.y_axis * h;
    RoiQuad {
        corners: [
            center - dx + dy,
            center + dx + dy,
            center + dx - dy,
            center - dx - dy,
        ],
        side: ROI_SIDE * u,
    }
}

/// Ground-truth detection boxes: two double-finger-gap squares centered at
/// A and B, one palm-center square centered at C.
pub fn boxes_from_annotation(ann: &PalmAnnotation, sizing: &BoxSizing) -> Result<[BoxSpec; 3]> {
    let t = derive_triple(ann)?;
    let [p2, p3, p4] = ann.gaps;
    let square = |class_id, center, side: f64| BoxSpec {
        class_id,
        center,
        width: side,
        height: side,
    };
    Ok([
        square(
            BoxClass::DoubleFingerGap,
            t.a,
            sizing.alpha * p2.distance(p3),
        ),
        square(
            BoxClass::DoubleFingerGap,
            t.b,
            sizing.alpha * p3.distance(p4),
        ),
        square(BoxClass::PalmCenter, t.c, sizing.beta * t.unit()),
    ])
}

/// What to do when a rotation carries points off the square canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanvasPolicy {
    /// Reject the rotated sample.
    #[default]
    Skip,
    /// Grow the canvas to hold the whole rotated square.
    Expand,
}

/// `(sin θ, cos θ)` for θ in degrees, exact at multiples of 90°.
pub fn sin_cos_deg(theta: f64) -> (f64, f64) {
    let r = theta.rem_euclid(360.0);
    if r == 0.0 {
        (0.0, 1.0)
    } else if r == 90.0 {
        (1.0, 0.0)
    } else if r == 180.0 {
        (0.0, -1.0)
    } else if r == 270.0 {
        (-1.0, 0.0)
    } else {
        r.to_radians().sin_cos()
    }
}

/// Maps the s_f × s_f canvas onto its rotated version.
///
/// Positive angles turn the picture counter-clockwise as displayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanvasRotation {
    sin: f64,
    cos: f64,
    src_size: u32,
    dst_size: u32,
}

impl CanvasRotation {
    pub fn new(theta: f64, src_size: u32, policy: CanvasPolicy) -> Result<Self> {
        if src_size == 0 {
            return Err(GeometryError::InvalidCanvas(src_size));
        }
        let (sin, cos) = sin_cos_deg(theta);
        let dst_size = match policy {
            CanvasPolicy::Skip => src_size,
            CanvasPolicy::Expand => {
                let s = src_size as f64 * (sin.abs() + cos.abs());
                // round away float noise before taking the ceiling
                ((s * 1e9).round() / 1e9).ceil() as u32
            }
        };
        Ok(Self {
            sin,
            cos,
            src_size,
            dst_size,
        })
    }

    pub fn dst_size(&self) -> u32 {
        self.dst_size
    }

    pub fn src_size(&self) -> u32 {
        self.src_size
    }

    pub fn forward(&self, p: Point2D) -> Point2D {
        let cs = self.src_size as f64 / 2.0;
        let cd = self.dst_size as f64 / 2.0;
        let (x, y) = (p.x - cs, p.y - cs);
        Point2D::new(
            cd + x * self.cos + y * self.sin,
            cd - x * self.sin + y * self.cos,
        )
    }

    pub fn inverse(&self, p: Point2D) -> Point2D {
        let cs = self.src_size as f64 / 2.0;
        let cd = self.dst_size as f64 / 2.0;
        let (x, y) = (p.x - cd, p.y - cd);
        Point2D::new(
            cs + x * self.cos - y * self.sin,
            cs + x * self.sin + y * self.cos,
        )
    }
}

/// Resizes an annotation onto an `out_size` square canvas and rotates it by
/// `theta` degrees about the canvas center. Fails if a point leaves the
/// canvas.
pub fn rotate_annotation(
    ann: &PalmAnnotation,
    theta: f64,
    out_size: u32,
) -> Result<PalmAnnotation> {
    rotate_annotation_with(ann, theta, out_size, CanvasPolicy::Skip)
}

pub fn rotate_annotation_with(
    ann: &PalmAnnotation,
    theta: f64,
    out_size: u32,
    policy: CanvasPolicy,
) -> Result<PalmAnnotation> {
    let rot = CanvasRotation::new(theta, out_size, policy)?;
    let sx = out_size as f64 / ann.image_width;
    let sy = out_size as f64 / ann.image_height;
    let size = rot.dst_size();
    let edge = size as f64;
    let names = ["P2", "P3", "P4", "P1"];
    let mut moved = [Point2D::default(); 4];
    let sources = ann.gaps.iter().copied().chain(ann.thumb_gap);
    for (i, p) in sources.enumerate() {
        let q = rot.forward(Point2D::new(p.x * sx, p.y * sy));
        if !(q.x >= 0.0 && q.y >= 0.0 && q.x <= edge && q.y <= edge) {
            return Err(GeometryError::PointOutOfCanvas {
                name: names[i],
                x: q.x,
                y: q.y,
                size,
            });
        }
        moved[i] = q;
    }
    PalmAnnotation::new(
        ann.thumb_gap.map(|_| moved[3]),
        [moved[0], moved[1], moved[2]],
        edge,
        edge,
        ann.hand,
        ann.palm_side,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2D {
        Point2D::new(x, y)
    }

    fn flat_annotation() -> PalmAnnotation {
        PalmAnnotation::new(
            Some(p(1.0, 4.0)),
            [p(0.0, 0.0), p(2.0, 0.0), p(4.0, 0.0)],
            10.0,
            10.0,
            Hand::Right,
            None,
        )
        .unwrap()
    }

    fn close(a: Point2D, b: Point2D, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol
    }

    #[test]
    fn triple_from_collinear_gaps() {
        let t = derive_triple(&flat_annotation()).unwrap();
        assert_eq!(t.a, p(1.0, 0.0));
        assert_eq!(t.b, p(3.0, 0.0));
        assert_eq!(t.c, p(2.0, 3.0));
    }

    #[test]
    fn triple_rotated_quarter_turn() {
        // shifted by 5 so every point sits inside the image
        let ann = PalmAnnotation::new(
            Some(p(1.0, 6.0)),
            [p(5.0, 5.0), p(5.0, 7.0), p(5.0, 9.0)],
            10.0,
            10.0,
            Hand::Left,
            None,
        )
        .unwrap();
        let t = derive_triple(&ann).unwrap();
        assert_eq!(t.a, p(5.0, 6.0));
        assert_eq!(t.b, p(5.0, 8.0));
        assert_eq!(t.c, p(2.0, 7.0));
    }

    #[test]
    fn coincident_gaps_rejected() {
        let err = PalmAnnotation::new(
            None,
            [p(1.0, 1.0), p(1.0, 1.0), p(3.0, 1.0)],
            10.0,
            10.0,
            Hand::Left,
            Some(PalmSide::PositiveNormal),
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::InvalidAnnotation(_)));
    }

    #[test]
    fn coinciding_midpoints_rejected() {
        // A == B exactly when P2 == P4
        let err = PalmAnnotation::new(
            None,
            [p(1.0, 1.0), p(2.0, 1.0), p(1.0, 1.0)],
            10.0,
            10.0,
            Hand::Left,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::InvalidAnnotation(_)));
    }

    #[test]
    fn missing_palm_side_is_degenerate() {
        let ann = PalmAnnotation::new(
            None,
            [p(0.0, 0.0), p(2.0, 0.0), p(4.0, 0.0)],
            10.0,
            10.0,
            Hand::Right,
            None,
        )
        .unwrap();
        assert!(matches!(
            derive_triple(&ann),
            Err(GeometryError::DegenerateAnnotation(_))
        ));
        let flagged = PalmAnnotation::new(
            None,
            [p(0.0, 0.0), p(2.0, 0.0), p(4.0, 0.0)],
            10.0,
            10.0,
            Hand::Right,
            Some(PalmSide::PositiveNormal),
        )
        .unwrap();
        // positive normal of (1,0)->(3,0) is (0,1)
        assert_eq!(derive_triple(&flagged).unwrap().c, p(2.0, 3.0));
    }

    #[test]
    fn thumb_gap_overrides_flag() {
        let ann = PalmAnnotation::new(
            Some(p(1.0, 4.0)),
            [p(0.0, 0.0), p(2.0, 0.0), p(4.0, 0.0)],
            10.0,
            10.0,
            Hand::Right,
            Some(PalmSide::NegativeNormal),
        )
        .unwrap();
        assert_eq!(derive_triple(&ann).unwrap().c, p(2.0, 3.0));
    }

    #[test]
    fn point_outside_image_rejected() {
        let err = PalmAnnotation::new(
            None,
            [p(0.0, 0.0), p(2.0, 0.0), p(11.0, 0.0)],
            10.0,
            10.0,
            Hand::Right,
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn frame_examples() {
        let t = KeypointTriple::new(p(1.0, 0.0), p(3.0, 0.0), p(2.0, 3.0)).unwrap();
        let f = frame_from_triple(&t).unwrap();
        assert_eq!(f.origin, p(2.0, 0.0));
        assert_eq!(f.unit, 2.0);
        assert_eq!(f.y_axis, p(0.0, -1.0));
        assert_eq!(f.x_axis, p(1.0, 0.0));

        let t = KeypointTriple::new(p(0.0, 1.0), p(0.0, 3.0), p(-3.0, 2.0)).unwrap();
        let f = frame_from_triple(&t).unwrap();
        assert_eq!(f.origin, p(0.0, 2.0));
        assert_eq!(f.unit, 2.0);
        assert!(close(f.y_axis, p(1.0, 0.0), 0.0));
        assert!(close(f.x_axis, p(0.0, 1.0), 0.0));
    }

    #[test]
    fn collinear_c_is_degenerate() {
        let t = KeypointTriple {
            a: p(1.0, 0.0),
            b: p(3.0, 0.0),
            c: p(7.0, 0.0),
        };
        assert!(matches!(
            frame_from_triple(&t),
            Err(GeometryError::DegenerateTriple(_))
        ));
        assert!(KeypointTriple::new(p(1.0, 0.0), p(3.0, 0.0), p(7.0, 0.0)).is_err());
        assert!(KeypointTriple::new(p(1.0, 0.0), p(1.0, 0.0), p(7.0, 2.0)).is_err());
    }

    #[test]
    fn pair_order_does_not_matter() {
        let t = KeypointTriple::new(p(10.3, 4.1), p(31.7, 9.9), p(18.0, 50.2)).unwrap();
        let swapped = KeypointTriple::new(t.b, t.a, t.c).unwrap();
        assert_eq!(
            frame_from_triple(&t).unwrap(),
            frame_from_triple(&swapped).unwrap()
        );
    }

    #[test]
    fn roi_quad_examples() {
        let f = LocalFrame {
            origin: p(2.0, 0.0),
            x_axis: p(1.0, 0.0),
            y_axis: p(0.0, -1.0),
            unit: 2.0,
        };
        let q = roi_quad(&f);
        assert_eq!(q.side, 5.0);
        assert_eq!(q.center(), p(2.0, 3.0));
        assert_eq!(
            q.corners,
            [p(-0.5, 0.5), p(4.5, 0.5), p(4.5, 5.5), p(-0.5, 5.5)]
        );
        let big = LocalFrame { unit: 100.0, ..f };
        assert_eq!(roi_quad(&big).side, 250.0);
    }

    #[test]
    fn local_coordinates_of_roi_center() {
        let t = KeypointTriple::new(p(12.0, 40.0), p(30.0, 44.0), p(25.0, 80.0)).unwrap();
        let f = frame_from_triple(&t).unwrap();
        let local = f.to_local(roi_quad(&f).center());
        assert!((local.x).abs() < 1e-12);
        assert!((local.y + 1.5).abs() < 1e-12);
    }

    #[test]
    fn boxes_for_flat_annotation() {
        let sizing = BoxSizing::new(1.5, 2.0).unwrap();
        let boxes = boxes_from_annotation(&flat_annotation(), &sizing).unwrap();
        assert_eq!(boxes[0].class_id, BoxClass::DoubleFingerGap);
        assert_eq!(
            (boxes[0].center, boxes[0].width, boxes[0].height),
            (p(1.0, 0.0), 3.0, 3.0)
        );
        assert_eq!((boxes[1].center, boxes[1].width), (p(3.0, 0.0), 3.0));
        assert_eq!(boxes[2].class_id, BoxClass::PalmCenter);
        assert_eq!((boxes[2].center, boxes[2].width), (p(2.0, 3.0), 4.0));
    }

    #[test]
    fn sizing_rejects_non_positive() {
        assert!(BoxSizing::new(0.0, 2.0).is_err());
        assert!(BoxSizing::new(1.5, -1.0).is_err());
        assert!(BoxSizing::new(f64::NAN, 1.0).is_err());
    }

    fn centered_annotation() -> PalmAnnotation {
        PalmAnnotation::new(
            Some(p(120.0, 260.0)),
            [p(150.0, 150.0), p(200.0, 140.0), p(250.0, 150.0)],
            400.0,
            400.0,
            Hand::Right,
            None,
        )
        .unwrap()
    }

    #[test]
    fn rotation_identity_cases() {
        let ann = centered_annotation();
        let same = rotate_annotation(&ann, 0.0, 400).unwrap();
        assert_eq!(same, ann);
        let scaled = rotate_annotation(&ann, 0.0, 200).unwrap();
        assert_eq!(scaled.gaps()[0], p(75.0, 75.0));
        let full = rotate_annotation(&ann, 360.0, 400).unwrap();
        for (a, b) in full.gaps().iter().zip(ann.gaps().iter()) {
            assert!(close(*a, *b, 1e-9));
        }
    }

    #[test]
    fn rotation_quarter_turn_is_counter_clockwise() {
        let ann = centered_annotation();
        let r = rotate_annotation(&ann, 90.0, 400).unwrap();
        // (150,150) is up-left of the center; turning ccw moves it down-left
        assert_eq!(r.gaps()[0], p(150.0, 250.0));
    }

    #[test]
    fn rotation_off_canvas_is_reported() {
        let ann = PalmAnnotation::new(
            Some(p(2.0, 2.0)),
            [p(1.0, 1.0), p(5.0, 1.0), p(9.0, 1.0)],
            10.0,
            10.0,
            Hand::Right,
            None,
        )
        .unwrap();
        let err = rotate_annotation(&ann, 45.0, 10).unwrap_err();
        assert!(matches!(err, GeometryError::PointOutOfCanvas { .. }));
        let grown = rotate_annotation_with(&ann, 45.0, 10, CanvasPolicy::Expand).unwrap();
        assert_eq!(grown.image_width(), 15.0);
    }

    #[test]
    fn canvas_rotation_inverse_roundtrip() {
        let rot = CanvasRotation::new(33.0, 416, CanvasPolicy::Expand).unwrap();
        let q = p(100.5, 311.25);
        assert!(close(rot.inverse(rot.forward(q)), q, 1e-9));
    }
}
