//! Polygon primitives, interior angles, key-corner identification and
//! boundary-chain decomposition.
//!
//! Coordinates are image pixels with `y` pointing down. Annotations run
//! clockwise on screen starting at the top-left corner, which is a positive
//! shoelace area in these coordinates.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, TAU};
use core::ops::{Add, Mul, Neg, Sub};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        libm::hypot(self.x, self.y)
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Self, t: f64) -> Self {
        self + (o - self) * t
    }
}

impl Add for Point2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// A text polygon with its four key corners.
///
/// Corners are stored as `[1st, 2nd, 3rd, 4th]`; 1st/4th bound the head
/// edge and 2nd/3rd bound the tail edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonAnnotation {
    pub points: Vec<Point2>,
    pub corners: Option<[usize; 4]>,
    pub transcription: Option<String>,
}

impl PolygonAnnotation {
    /// Validates the ring and leaves corners unset.
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        let poly = Self { points, corners: None, transcription: None };
        poly.validate()?;
        Ok(poly)
    }

    /// Validates the ring and identifies corners with [`identify_corners`].
    pub fn with_identified_corners(
        points: Vec<Point2>,
        cfg: &CornerEstimationConfig,
        fixed_layout: Option<usize>,
    ) -> Result<Self> {
        let mut poly = Self::new(points)?;
        poly.corners = Some(identify_corners(&poly, cfg, fixed_layout)?);
        Ok(poly)
    }

    pub fn with_transcription(mut self, text: impl Into<String>) -> Self {
        self.transcription = Some(text.into());
        self
    }

    pub fn with_corners(mut self, corners: [usize; 4]) -> Result<Self> {
        check_corner_order(corners, self.points.len())?;
        self.corners = Some(corners);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// At least four finite points, no zero-length edges, no crossing edges.
    pub fn validate(&self) -> Result<()> {
        let pts = &self.points;
        let m = pts.len();
        if m < 4 {
            return Err(Error::TooFewPoints { got: m, min: 4 });
        }
        if !pts.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite);
        }
        for i in 0..m {
            if pts[i] == pts[(i + 1) % m] {
                return Err(Error::DegenerateVertex { index: (i + 1) % m });
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                // adjacent edges share a vertex
                if j == i + 1 || (i == 0 && j == m - 1) {
                    continue;
                }
                if segments_intersect(pts[i], pts[(i + 1) % m], pts[j], pts[(j + 1) % m]) {
                    return Err(Error::SelfIntersecting { edges: (i, j) });
                }
            }
        }
        if signed_area(pts) == 0.0 {
            return Err(Error::DegenerateVertex { index: 0 });
        }
        if let Some(c) = self.corners {
            check_corner_order(c, m)?;
        }
        Ok(())
    }

    /// Interior angle at vertex `i`, in `(0, 2π)`.
    pub fn interior_angle(&self, i: usize) -> Result<f64> {
        let m = self.points.len();
        if i >= m || m < 3 {
            return Err(Error::DegenerateVertex { index: i });
        }
        let orientation = if signed_area(&self.points) >= 0.0 { 1.0 } else { -1.0 };
        vertex_angle(&self.points, i, orientation)
    }

    pub fn min_edge_len(&self) -> f64 {
        min_edge_len(&self.points)
    }

    pub fn split_chains(&self) -> Result<BoundaryChains> {
        split_chains(self)
    }

    pub fn area(&self) -> f64 {
        libm::fabs(signed_area(&self.points))
    }
}

fn vertex_angle(pts: &[Point2], i: usize, orientation: f64) -> Result<f64> {
    let m = pts.len();
    let prev = pts[(i + m - 1) % m];
    let cur = pts[i];
    let next = pts[(i + 1) % m];
    let e_in = cur - prev;
    let e_out = next - cur;
    if e_in.norm() == 0.0 || e_out.norm() == 0.0 {
        return Err(Error::DegenerateVertex { index: i });
    }
    let turn = libm::atan2(orientation * e_in.cross(e_out), e_in.dot(e_out));
    Ok(PI - turn)
}

/// Shoelace area; positive for on-screen clockwise rings.
pub fn signed_area(pts: &[Point2]) -> f64 {
    let m = pts.len();
    let mut acc = 0.0;
    for i in 0..m {
        acc += pts[i].cross(pts[(i + 1) % m]);
    }
    0.5 * acc
}

/// Minimum Euclidean length over the closed ring's edges.
pub fn min_edge_len(pts: &[Point2]) -> f64 {
    let m = pts.len();
    (0..m).map(|i| pts[i].dist(pts[(i + 1) % m])).fold(f64::INFINITY, f64::min)
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, collinear overlaps included.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// True when any two non-adjacent edges of the ring touch.
pub fn is_self_intersecting(pts: &[Point2]) -> bool {
    let m = pts.len();
    (0..m).any(|i| {
        (i + 2..m).any(|j| {
            !(i == 0 && j == m - 1)
                && segments_intersect(pts[i], pts[(i + 1) % m], pts[j], pts[(j + 1) % m])
        })
    })
}

/// Parameter `t ∈ [0, 1]` and distance of the closest point on segment `ab`.
pub fn project_on_segment(p: Point2, a: Point2, b: Point2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (t, p.dist(a.lerp(b, t)))
}

/// Closest point on an open polyline.
pub fn nearest_on_polyline(p: Point2, chain: &[Point2]) -> Point2 {
    match chain {
        [] => p,
        [only] => *only,
        _ => {
            let mut best = (f64::INFINITY, chain[0]);
            for w in chain.windows(2) {
                let (t, d) = project_on_segment(p, w[0], w[1]);
                if d < best.0 {
                    best = (d, w[0].lerp(w[1], t));
                }
            }
            best.1
        }
    }
}

/// Point-in-polygon where points on the boundary count as inside.
pub fn contains_point(pts: &[Point2], p: Point2) -> bool {
    let m = pts.len();
    let mut inside = false;
    for i in 0..m {
        let a = pts[i];
        let b = pts[(i + 1) % m];
        if project_on_segment(p, a, b).1 <= 1e-9 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerEstimationConfig {
    /// Weight of the right-angle terms in the tail score.
    pub gamma: f64,
    /// Height/width ratio above which a polygon counts as vertical text and
    /// its top-right point becomes the 1st corner. `None` disables the rule.
    pub vertical_ratio: Option<f64>,
}

impl Default for CornerEstimationConfig {
    fn default() -> Self {
        Self { gamma: 0.5, vertical_ratio: Some(1.5) }
    }
}

/// Score of the candidate tail pair whose first vertex has interior angle
/// `a` and second `b`; lower is better.
pub fn tail_pair_cost(a: f64, b: f64, gamma: f64) -> f64 {
    gamma * (libm::fabs(a - FRAC_PI_2) + libm::fabs(b - FRAC_PI_2)) + libm::fabs(a + b - PI)
}

/// Finds the four key corners of a clockwise annotation.
///
/// With `fixed_layout = Some(k)` the polygon must have exactly `k` points
/// split evenly into a top and a bottom row, and corners come from indices.
/// Otherwise the 1st and 4th corners are the first and last annotated
/// points, and the tail pair is the adjacent vertex pair strictly between
/// them that minimizes [`tail_pair_cost`]. Ties go to the smaller index.
pub fn identify_corners(
    poly: &PolygonAnnotation,
    cfg: &CornerEstimationConfig,
    fixed_layout: Option<usize>,
) -> Result<[usize; 4]> {
    let m = poly.points.len();
    if m < 4 {
        return Err(Error::TooFewPoints { got: m, min: 4 });
    }
    if cfg.gamma < 0.0 || !cfg.gamma.is_finite() {
        return Err(Error::InvalidConfig("gamma must be a finite non-negative number"));
    }
    if let Some(k) = fixed_layout {
        if k != m || k % 2 != 0 {
            return Err(Error::BadLayout { layout: k, points: m });
        }
        return Ok([0, k / 2 - 1, k / 2, k - 1]);
    }
    if m - 3 < 1 {
        return Err(Error::EmptySearchRange);
    }

    let shift = match cfg.vertical_ratio {
        Some(ratio) if is_vertical(&poly.points, ratio) => 1,
        _ => 0,
    };
    let orientation = if signed_area(&poly.points) >= 0.0 { 1.0 } else { -1.0 };
    let angles = (0..m)
        .map(|i| vertex_angle(&poly.points, i, orientation))
        .collect::<Result<Vec<_>>>()?;
    let at = |k: usize| angles[(k + shift) % m];

    let mut best: Option<(f64, usize)> = None;
    for i in 1..=m - 3 {
        let cost = tail_pair_cost(at(i), at(i + 1), cfg.gamma);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, i));
        }
    }
    let (_, i) = best.ok_or(Error::EmptySearchRange)?;
    Ok([shift % m, (i + shift) % m, (i + 1 + shift) % m, (m - 1 + shift) % m])
}

fn is_vertical(pts: &[Point2], ratio: f64) -> bool {
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    (y1 - y0) > (x1 - x0) * ratio
}

fn check_corner_order(c: [usize; 4], m: usize) -> Result<()> {
    if c.iter().any(|&i| i >= m) {
        return Err(Error::CornerOrder(c));
    }
    let rel = |i: usize| (i + m - c[0]) % m;
    if !(rel(c[1]) > 0 && rel(c[1]) < rel(c[2]) && rel(c[2]) < rel(c[3])) {
        return Err(Error::CornerOrder(c));
    }
    Ok(())
}

/// The polygon boundary cut at the four key corners.
///
/// Each chain includes both of its corner endpoints, so neighbours share
/// their end points.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryChains {
    pub top: Vec<Point2>,
    pub tail: Vec<Point2>,
    pub bottom: Vec<Point2>,
    pub head: Vec<Point2>,
}

impl BoundaryChains {
    /// Reassembles the ring starting at the 1st corner.
    pub fn to_ring(&self) -> Vec<Point2> {
        let mut ring = Vec::new();
        for chain in [&self.top, &self.tail, &self.bottom, &self.head] {
            ring.extend_from_slice(&chain[..chain.len() - 1]);
        }
        ring
    }
}

/// Decomposes the ring into top (1st→2nd), tail (2nd→3rd), bottom (3rd→4th)
/// and head (4th→1st) chains.
pub fn split_chains(poly: &PolygonAnnotation) -> Result<BoundaryChains> {
    let c = poly.corners.ok_or(Error::CornersUnset)?;
    let m = poly.points.len();
    check_corner_order(c, m)?;
    let walk = |from: usize, to: usize| {
        let steps = (to + m - from) % m;
        (0..=steps).map(|k| poly.points[(from + k) % m]).collect::<Vec<_>>()
    };
    Ok(BoundaryChains {
        top: walk(c[0], c[1]),
        tail: walk(c[1], c[2]),
        bottom: walk(c[2], c[3]),
        head: walk(c[3], c[0]),
    })
}

/// Total length of an open polyline.
pub fn polyline_length(chain: &[Point2]) -> f64 {
    chain.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Normalizes an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = libm::fmod(a, TAU);
    if r < 0.0 { r + TAU } else { r }
}
