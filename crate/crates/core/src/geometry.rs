//! Oriented boxes in long-edge form, their corner polygons, rotated IoU, and
//! the classical parameterizations that exhibit boundary discontinuity.
//!
//! Orientation convention: the long axis of a box with angle `θ` points along
//! `(cos θ, −sin θ)` in (x, y) image coordinates. This is the convention under
//! which the box footprint has covariance
//! `[[λ1c²+λ2s², (λ2−λ1)sc], [(λ2−λ1)sc, λ1s²+λ2c²]]`, so corners, IoU and the
//! Gaussian forms all describe the same rectangle.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub type Point = [f64; 2];

/// Unvalidated box parameters: any side order, any angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RawBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        Self { cx, cy, w, h, theta }
    }
}

/// Oriented box in long-edge form: `w ≥ h > 0`, `θ ∈ [−π/2, π/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct ObbLe {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl TryFrom<RawBox> for ObbLe {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        normalize(raw)
    }
}

impl From<ObbLe> for RawBox {
    fn from(b: ObbLe) -> Self {
        RawBox::new(b.cx, b.cy, b.w, b.h, b.theta)
    }
}

impl ObbLe {
    /// Normalizing constructor; see [`normalize`].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        normalize(RawBox::new(cx, cy, w, h, theta))
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn raw(&self) -> RawBox {
        (*self).into()
    }

    /// Same box with the long side scaled by `factor ≥ 1`.
    pub(crate) fn with_long_side_scaled(&self, factor: f64) -> ObbLe {
        debug_assert!(factor >= 1.0);
        ObbLe { w: self.w * factor, ..*self }
    }
}

/// Wraps any angle into `[−π/2, π/2)`. Values already in range are returned
/// unchanged, which makes the wrap idempotent bit-for-bit.
pub fn wrap_half_turn(theta: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&theta) {
        return theta;
    }
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    // rounding in the line above can land a hair outside the interval
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    if !(-FRAC_PI_2..FRAC_PI_2).contains(&t) {
        t = -FRAC_PI_2;
    }
    t
}

/// Long-edge normalization: swap sides (rotating θ by π/2) when `h > w`,
/// then wrap θ into `[−π/2, π/2)`. The rectangle itself is unchanged.
pub fn normalize(raw: RawBox) -> Result<ObbLe> {
    let RawBox { cx, cy, w, h, theta } = raw;
    if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite() && theta.is_finite()) {
        return Err(Error::InvalidBox(format!("non-finite parameter in {raw:?}")));
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidBox(format!("sides must be positive, got w={w}, h={h}")));
    }
    let (w, h, theta) = if h > w { (h, w, theta + FRAC_PI_2) } else { (w, h, theta) };
    Ok(ObbLe { cx, cy, w, h, theta: wrap_half_turn(theta) })
}

/// Maps a point in box-local coordinates (long axis, short axis) to the image.
fn local_to_image(cx: f64, cy: f64, theta: f64, a: f64, b: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [cx + a * c + b * s, cy - a * s + b * c]
}

/// Corners of a raw box, starting at the image of local `(−w/2, −h/2)` and
/// continuing in increasing local angle.
pub fn raw_corners(b: &RawBox) -> [Point; 4] {
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
        .map(|(a, bb)| local_to_image(b.cx, b.cy, b.theta, a, bb))
}

/// Canonical corner order of a normalized box.
pub fn corners(b: &ObbLe) -> [Point; 4] {
    raw_corners(&b.raw())
}

/// Image-frame order: topmost corner first (smallest y, ties by smallest x),
/// then clockwise on screen (y pointing down).
pub fn image_ordered_corners(b: &ObbLe) -> [Point; 4] {
    let pts = corners(b);
    let start = (0..4)
        .min_by(|&i, &j| {
            let (p, q) = (pts[i], pts[j]);
            p[1].total_cmp(&q[1]).then(p[0].total_cmp(&q[0]))
        })
        .expect("four corners");
    let ang = |p: Point| (p[1] - b.cy).atan2(p[0] - b.cx);
    let a0 = ang(pts[start]);
    let mut rest: Vec<(f64, Point)> = (0..4)
        .filter(|&i| i != start)
        .map(|i| ((ang(pts[i]) - a0).rem_euclid(2.0 * PI), pts[i]))
        .collect();
    rest.sort_by(|x, y| x.0.total_cmp(&y.0));
    [pts[start], rest[0].1, rest[1].1, rest[2].1]
}

/// Signed shoelace area (positive for counterclockwise in a y-up frame).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn cross(a: Point, b: Point, p: Point) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Sutherland–Hodgman: clips `subject` to the convex polygon `clip`, which
/// must have positive signed area.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.len() < 3 {
            return Vec::new();
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let s = input[j];
            let e = input[(j + 1) % m];
            let ds = cross(a, b, s);
            let de = cross(a, b, e);
            let (s_in, e_in) = (ds >= 0.0, de >= 0.0);
            if s_in != e_in {
                let t = ds / (ds - de);
                out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
            }
            if e_in {
                out.push(e);
            }
        }
    }
    out
}

/// Polygons whose area falls below this are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

fn ccw(mut poly: [Point; 4]) -> [Point; 4] {
    if polygon_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Intersection over union of two oriented rectangles.
pub fn rotated_iou(a: &ObbLe, b: &ObbLe) -> f64 {
    // fixed argument order makes the result exactly symmetric
    let key = |x: &ObbLe| [x.cx, x.cy, x.w, x.h, x.theta];
    let (a, b) = if key(a).iter().zip(key(b)).map(|(p, q)| p.total_cmp(&q)).find(|o| o.is_ne())
        == Some(std::cmp::Ordering::Greater)
    {
        (b, a)
    } else {
        (a, b)
    };
    let pa = ccw(corners(a));
    let pb = ccw(corners(b));
    let inter = clip_convex(&pa, &pb);
    let ia = polygon_area(&inter).abs();
    let ia = if ia < AREA_EPS { 0.0 } else { ia };
    let union = a.area() + b.area() - ia;
    if union <= AREA_EPS {
        return 0.0;
    }
    (ia / union).clamp(0.0, 1.0)
}

/// Classical box parameterizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprKind {
    /// `(cx, cy, w, h, θ)`.
    Xywht,
    /// Topmost corner, its long-edge neighbour, and the short side.
    TwoVertexH,
    /// Four corners in image-frame order.
    FourVertex,
    /// Center, polar radius, and polar angles of the first two image-ordered corners.
    Polar,
    /// Center-to-edge-midpoint vectors in the top and right quadrant slots
    /// plus the enclosing axis-aligned box size.
    Bbav,
}

/// Whether a component is measured in pixels or radians.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Length,
    Angle,
}

impl ReprKind {
    pub const ALL: [ReprKind; 5] = [
        ReprKind::Xywht,
        ReprKind::TwoVertexH,
        ReprKind::FourVertex,
        ReprKind::Polar,
        ReprKind::Bbav,
    ];

    pub fn len(&self) -> usize {
        self.units().len()
    }

    pub fn units(&self) -> &'static [Unit] {
        use Unit::*;
        match self {
            ReprKind::Xywht => &[Length, Length, Length, Length, Angle],
            ReprKind::TwoVertexH => &[Length; 5],
            ReprKind::FourVertex => &[Length; 8],
            ReprKind::Polar => &[Length, Length, Length, Angle, Angle],
            ReprKind::Bbav => &[Length; 6],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReprKind::Xywht => "xywht",
            ReprKind::TwoVertexH => "two_vertex_h",
            ReprKind::FourVertex => "four_vertex",
            ReprKind::Polar => "polar",
            ReprKind::Bbav => "bbav",
        }
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReprKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReprKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

/// An encoded box. `diag` is the source box diagonal, used to make length
/// components dimensionless in [`repr_distance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprVector {
    kind: ReprKind,
    values: Vec<f64>,
    diag: f64,
}

impl ReprVector {
    pub fn new(kind: ReprKind, values: Vec<f64>, diag: f64) -> Result<Self> {
        if values.len() != kind.len() {
            return Err(Error::Shape { axis: "repr", expected: kind.len(), found: values.len() });
        }
        if !(diag > 0.0) {
            return Err(Error::InvalidBox(format!("diagonal must be positive, got {diag}")));
        }
        Ok(Self { kind, values, diag })
    }

    pub fn kind(&self) -> ReprKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn diag(&self) -> f64 {
        self.diag
    }
}

/// Encodes a box in the given classical parameterization.
pub fn encode(b: &ObbLe, kind: ReprKind) -> ReprVector {
    let values = match kind {
        ReprKind::Xywht => vec![b.cx, b.cy, b.w, b.h, b.theta],
        ReprKind::FourVertex => image_ordered_corners(b).iter().flat_map(|p| *p).collect(),
        ReprKind::TwoVertexH => {
            let pts = image_ordered_corners(b);
            let d1 = dist(pts[0], pts[1]);
            let d3 = dist(pts[0], pts[3]);
            // ties (squares) keep the clockwise neighbour
            let other = if d3 > d1 { pts[3] } else { pts[1] };
            vec![pts[0][0], pts[0][1], other[0], other[1], b.h]
        }
        ReprKind::Polar => {
            let pts = image_ordered_corners(b);
            let rho = 0.5 * b.diagonal();
            let phi = |p: Point| (p[1] - b.cy).atan2(p[0] - b.cx);
            vec![b.cx, b.cy, rho, phi(pts[0]), phi(pts[1])]
        }
        ReprKind::Bbav => {
            // the four midpoint vectors are ±u, ±v; each lands in one screen quadrant
            let (s, c) = b.theta.sin_cos();
            let u = [c * b.w / 2.0, -s * b.w / 2.0];
            let v = [s * b.h / 2.0, c * b.h / 2.0];
            let mut top = [0.0; 2];
            let mut right = [0.0; 2];
            for vec in [u, v, [-u[0], -u[1]], [-v[0], -v[1]]] {
                let a = vec[1].atan2(vec[0]);
                if (-FRAC_PI_2..0.0).contains(&a) {
                    top = vec;
                } else if (0.0..FRAC_PI_2).contains(&a) {
                    right = vec;
                }
            }
            let ext_w = (b.w * c).abs() + (b.h * s).abs();
            let ext_h = (b.w * s).abs() + (b.h * c).abs();
            vec![top[0], top[1], right[0], right[1], ext_w, ext_h]
        }
    };
    ReprVector { kind, values, diag: b.diagonal() }
}

fn dist(p: Point, q: Point) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Euclidean distance with lengths divided by the mean box diagonal of the
/// two encodings and angles left in radians.
pub fn repr_distance(u: &ReprVector, v: &ReprVector) -> Result<f64> {
    if u.kind != v.kind {
        return Err(Error::KindMismatch { left: u.kind.to_string(), right: v.kind.to_string() });
    }
    let scale = 0.5 * (u.diag + v.diag);
    let s: f64 = u
        .kind
        .units()
        .iter()
        .zip(u.values.iter().zip(&v.values))
        .map(|(unit, (a, b))| match unit {
            Unit::Length => ((a - b) / scale).powi(2),
            Unit::Angle => (a - b).powi(2),
        })
        .sum();
    Ok(s.sqrt())
}

/// Ranges for [`boundary_pairs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPairConfig {
    pub eps_min: f64,
    pub eps_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub size_min: f64,
    pub size_max: f64,
}

impl Default for BoundaryPairConfig {
    fn default() -> Self {
        Self {
            eps_min: 0.001,
            eps_max: 0.05,
            aspect_min: 1.2,
            aspect_max: 2.5,
            size_min: 4.0,
            size_max: 64.0,
        }
    }
}

/// Two copies of the same rectangle sitting on either side of the `±π/2`
/// angle seam: `a.θ = π/2 − ε`, `b.θ = −(π/2 − ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub a: ObbLe,
    pub b: ObbLe,
    pub eps: f64,
    pub iou: f64,
}

pub fn boundary_pairs(n: usize, seed: u64, cfg: &BoundaryPairConfig) -> Vec<BoundaryPair> {
    let mut rng = SeedStream::new(seed).fork(0x6b64);
    (0..n)
        .map(|_| {
            let eps = rng.random_range(cfg.eps_min..=cfg.eps_max);
            let w = rng.random_range(cfg.size_min..=cfg.size_max);
            let aspect = rng.random_range(cfg.aspect_min..=cfg.aspect_max);
            let cx = rng.random_range(-100.0..100.0);
            let cy = rng.random_range(-100.0..100.0);
            let h = w / aspect;
            let theta = FRAC_PI_2 - eps;
            let a = ObbLe::new(cx, cy, w, h, theta).expect("valid sampled box");
            let b = ObbLe::new(cx, cy, w, h, -theta).expect("valid sampled box");
            BoundaryPair { a, b, eps, iou: rotated_iou(&a, &b) }
        })
        .collect()
}
