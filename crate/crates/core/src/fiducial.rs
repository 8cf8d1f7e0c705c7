//! Fiducial points from score and geometry maps.
//!
//! The four corners are averages of `pixel + offset` over the head and tail
//! regions. The remaining points are placed by recursive bisection of the
//! index range between two placed points: the along-axis coordinate is an
//! index-weighted blend of the pair, the cross-axis coordinate is the mean
//! boundary offset target over a thin band of center pixels.
//!
//! Every placed point records where it came from in a [`FiducialTrace`] so
//! gradients on the points can be routed back to geometry-map pixels.

use alloc::vec;
use alloc::vec::Vec;

use crate::geom::Point2;
use crate::label::{GeometryMaps, RegionClass, ScoreMaps, BOTTOM_CHANNELS, HEAD_CHANNELS, TAIL_CHANNELS, TOP_CHANNELS};
use crate::{Error, Grid, Result};

pub type Pixel = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiducialConfig {
    /// Points per side; the set has `2n` points.
    pub n: usize,
    /// Half width of the band window, in pixels.
    pub delta_ep: f64,
    /// How many times the band window is doubled before interpolating.
    pub widen_attempts: usize,
}

impl Default for FiducialConfig {
    fn default() -> Self {
        Self { n: 7, delta_ep: 3.0, widen_attempts: 3 }
    }
}

impl FiducialConfig {
    pub fn with_n(n: usize) -> Self {
        Self { n, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig("at least 2 fiducial points per side are required"));
        }
        if !(self.delta_ep > 0.0) {
            return Err(Error::InvalidConfig("band half width must be positive"));
        }
        Ok(())
    }
}

/// `2n` boundary points: top row head→tail, then bottom row tail→head.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialSet {
    pub n: usize,
    pub points: Vec<Point2>,
}

impl FiducialSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 4 || !points.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig("fiducial sets need an even number (>= 4) of points"));
        }
        Ok(Self { n: points.len() / 2, points })
    }

    pub fn top(&self) -> &[Point2] {
        &self.points[..self.n]
    }

    pub fn bottom(&self) -> &[Point2] {
        &self.points[self.n..]
    }

    /// `[P1, P_N, P_{N+1}, P_{2N}]`.
    pub fn corners(&self) -> [Point2; 4] {
        let n = self.n;
        [self.points[0], self.points[n - 1], self.points[n], self.points[2 * n - 1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanAxis {
    Horizontal,
    Vertical,
}

impl SpanAxis {
    pub fn of(a: Point2, b: Point2) -> Self {
        if libm::fabs(b.x - a.x) >= libm::fabs(b.y - a.y) {
            SpanAxis::Horizontal
        } else {
            SpanAxis::Vertical
        }
    }

    fn along(self, p: Point2) -> f64 {
        match self {
            SpanAxis::Horizontal => p.x,
            SpanAxis::Vertical => p.y,
        }
    }

    fn compose(self, along: f64, across: f64) -> Point2 {
        match self {
            SpanAxis::Horizontal => Point2::new(along, across),
            SpanAxis::Vertical => Point2::new(across, along),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    /// Boundary-offset channels `[dx, dy]` for this side.
    pub fn channels(self) -> [usize; 2] {
        match self {
            Side::Top => TOP_CHANNELS,
            Side::Bottom => BOTTOM_CHANNELS,
        }
    }
}

/// Center pixels within `±delta_ep` of a coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRegion {
    pub pixels: Vec<Pixel>,
    pub axis: SpanAxis,
    pub mid: f64,
}

/// Pixel sets of one instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceRegions {
    pub head: Vec<Pixel>,
    pub tail: Vec<Pixel>,
    pub center: Vec<Pixel>,
}

impl InstanceRegions {
    /// Collects pixels whose component id in each labeling matches.
    pub fn from_ids(
        center_ids: &Grid<u32>,
        center: u32,
        head_ids: &Grid<u32>,
        head: Option<u32>,
        tail_ids: &Grid<u32>,
        tail: Option<u32>,
    ) -> Self {
        let collect = |ids: &Grid<u32>, id: Option<u32>| -> Vec<Pixel> {
            let Some(id) = id else { return Vec::new() };
            let mut out = Vec::new();
            for y in 0..ids.height {
                for x in 0..ids.width {
                    if *ids.at(x, y, 0) == id {
                        out.push((x, y));
                    }
                }
            }
            out
        };
        Self {
            head: collect(head_ids, head),
            tail: collect(tail_ids, tail),
            center: collect(center_ids, Some(center)),
        }
    }

    /// All head/tail/center pixels that a label map attributes to
    /// annotation `instance` (1-based id), regardless of connectivity.
    pub fn from_score(score: &ScoreMaps, instance: u32) -> Self {
        let mut out = Self::default();
        for y in 0..score.height() {
            for x in 0..score.width() {
                if score.instance(x, y) != instance {
                    continue;
                }
                match score.label(x, y) {
                    RegionClass::Head => out.head.push((x, y)),
                    RegionClass::Tail => out.tail.push((x, y)),
                    RegionClass::Center => out.center.push((x, y)),
                    _ => {}
                }
            }
        }
        out
    }
}

/// Mean of `pixel + (offset[cx], offset[cy])` over `pixels`.
fn mean_target(pixels: &[Pixel], offsets: &Grid<f32>, ch: [usize; 2]) -> Result<Point2> {
    if pixels.is_empty() {
        return Err(Error::UnmatchedInstance);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(x, y) in pixels {
        sx += x as f64 + *offsets.at(x, y, ch[0]) as f64;
        sy += y as f64 + *offsets.at(x, y, ch[1]) as f64;
    }
    let k = pixels.len() as f64;
    Ok(Point2::new(sx / k, sy / k))
}

/// `[P1, P_N, P_{N+1}, P_{2N}]` by averaging corner-offset targets.
pub fn corner_fiducials(regions: &InstanceRegions, geo: &GeometryMaps) -> Result<[Point2; 4]> {
    if regions.head.is_empty() || regions.tail.is_empty() {
        return Err(Error::UnmatchedInstance);
    }
    let off = &geo.corner_offsets;
    Ok([
        mean_target(&regions.head, off, [HEAD_CHANNELS[0], HEAD_CHANNELS[1]])?,
        mean_target(&regions.tail, off, [TAIL_CHANNELS[0], TAIL_CHANNELS[1]])?,
        mean_target(&regions.tail, off, [TAIL_CHANNELS[2], TAIL_CHANNELS[3]])?,
        mean_target(&regions.head, off, [HEAD_CHANNELS[2], HEAD_CHANNELS[3]])?,
    ])
}

/// Blend weights `(w_a, w_b)` for the index-middle point of an `n`-point run.
pub fn midpoint_weights(n: usize) -> (f64, f64) {
    debug_assert!(n >= 3);
    let span = (n - 1) as f64;
    (((n - 1).div_ceil(2)) as f64 / span, ((n - 1) / 2) as f64 / span)
}

/// Along-axis coordinate of the index-middle point between `a` and `b`.
pub fn midpoint_coord(a: f64, b: f64, n: usize) -> f64 {
    let (wa, wb) = midpoint_weights(n);
    wa * a + wb * b
}

/// Center pixels whose along-axis coordinate lies in `[mid - ep, mid + ep]`.
pub fn band_pixels(center: &[Pixel], mid: f64, delta_ep: f64, axis: SpanAxis) -> Result<BandRegion> {
    let pixels: Vec<Pixel> = center
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let c = match axis {
                SpanAxis::Horizontal => x as f64,
                SpanAxis::Vertical => y as f64,
            };
            libm::fabs(c - mid) <= delta_ep
        })
        .collect();
    if pixels.is_empty() {
        return Err(Error::BandMiss);
    }
    Ok(BandRegion { pixels, axis, mid })
}

/// Fiducial from a band: the along-axis coordinate is the band's `mid`, the
/// cross-axis coordinate averages `pixel + boundary offset` for `side`.
pub fn band_fiducial(band: &BandRegion, geo: &GeometryMaps, side: Side) -> Result<Point2> {
    if band.pixels.is_empty() {
        return Err(Error::BandMiss);
    }
    let ch = band_channel(band.axis, side);
    let mut sum = 0.0;
    for &(x, y) in &band.pixels {
        let base = match band.axis {
            SpanAxis::Horizontal => y as f64,
            SpanAxis::Vertical => x as f64,
        };
        sum += base + *geo.boundary_offsets.at(x, y, ch) as f64;
    }
    Ok(band.axis.compose(band.mid, sum / band.pixels.len() as f64))
}

fn band_channel(axis: SpanAxis, side: Side) -> usize {
    let [cx, cy] = side.channels();
    match axis {
        SpanAxis::Horizontal => cy,
        SpanAxis::Vertical => cx,
    }
}

/// Where a generated point came from.
#[derive(Debug, Clone, PartialEq)]
pub enum PointOrigin {
    /// Mean over a head or tail region of pixel + corner offsets
    /// (`channels` index the 8 corner channels).
    Corner { pixels: Vec<Pixel>, channels: [usize; 2] },
    /// Along-axis coordinate blended from two earlier points, cross-axis
    /// coordinate averaged over a band (`channel` indexes the 4 boundary channels).
    Band { pixels: Vec<Pixel>, axis: SpanAxis, channel: usize, parents: (usize, usize), weights: (f64, f64) },
    /// Linear blend of two earlier points after the band search failed.
    Interpolated { parents: (usize, usize), weights: (f64, f64) },
}

/// Provenance of every point of a [`FiducialSet`], in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialTrace {
    pub origins: Vec<PointOrigin>,
    pub order: Vec<usize>,
}

impl FiducialTrace {
    pub fn interpolated_count(&self) -> usize {
        self.origins.iter().filter(|o| matches!(o, PointOrigin::Interpolated { .. })).count()
    }
}

/// Generates the full `2N` point set.
pub fn generate_fiducials(
    regions: &InstanceRegions,
    geo: &GeometryMaps,
    cfg: &FiducialConfig,
) -> Result<FiducialSet> {
    generate_fiducials_traced(regions, geo, cfg).map(|(set, _)| set)
}

/// Like [`generate_fiducials`] but also returns the provenance of each point.
pub fn generate_fiducials_traced(
    regions: &InstanceRegions,
    geo: &GeometryMaps,
    cfg: &FiducialConfig,
) -> Result<(FiducialSet, FiducialTrace)> {
    cfg.validate()?;
    let n = cfg.n;
    let corners = corner_fiducials(regions, geo)?;
    let mut points = vec![Point2::default(); 2 * n];
    let mut origins = vec![PointOrigin::Interpolated { parents: (0, 0), weights: (0.0, 0.0) }; 2 * n];
    let mut order = Vec::with_capacity(2 * n);

    let corner_slots = [
        (0, &regions.head, [HEAD_CHANNELS[0], HEAD_CHANNELS[1]]),
        (n - 1, &regions.tail, [TAIL_CHANNELS[0], TAIL_CHANNELS[1]]),
        (n, &regions.tail, [TAIL_CHANNELS[2], TAIL_CHANNELS[3]]),
        (2 * n - 1, &regions.head, [HEAD_CHANNELS[2], HEAD_CHANNELS[3]]),
    ];
    for (k, (slot, pixels, channels)) in corner_slots.into_iter().enumerate() {
        points[slot] = corners[k];
        origins[slot] = PointOrigin::Corner { pixels: pixels.clone(), channels };
        order.push(slot);
    }

    let mut gen = Bisector { regions, geo, cfg, points: &mut points, origins: &mut origins, order: &mut order };
    gen.fill(0, n - 1, Side::Top);
    gen.fill(n, 2 * n - 1, Side::Bottom);

    Ok((FiducialSet { n, points }, FiducialTrace { origins, order }))
}

struct Bisector<'a> {
    regions: &'a InstanceRegions,
    geo: &'a GeometryMaps,
    cfg: &'a FiducialConfig,
    points: &'a mut Vec<Point2>,
    origins: &'a mut Vec<PointOrigin>,
    order: &'a mut Vec<usize>,
}

impl Bisector<'_> {
    fn fill(&mut self, i: usize, j: usize, side: Side) {
        if j < i + 2 {
            return;
        }
        let run = j - i + 1;
        let k = i + (run - 1) / 2;
        let (a, b) = (self.points[i], self.points[j]);
        let axis = SpanAxis::of(a, b);
        let weights = midpoint_weights(run);
        let mid = weights.0 * axis.along(a) + weights.1 * axis.along(b);

        let mut ep = self.cfg.delta_ep;
        let mut placed = None;
        for _ in 0..=self.cfg.widen_attempts {
            if let Ok(band) = band_pixels(&self.regions.center, mid, ep, axis) {
                let p = band_fiducial(&band, self.geo, side).expect("band is non-empty");
                placed = Some((p, band));
                break;
            }
            ep *= 2.0;
        }
        let (point, origin) = match placed {
            Some((p, band)) => (
                p,
                PointOrigin::Band {
                    channel: band_channel(axis, side),
                    pixels: band.pixels,
                    axis,
                    parents: (i, j),
                    weights,
                },
            ),
            None => (a * weights.0 + b * weights.1, PointOrigin::Interpolated { parents: (i, j), weights }),
        };
        self.points[k] = point;
        self.origins[k] = origin;
        self.order.push(k);
        self.fill(i, k, side);
        self.fill(k, j, side);
    }
}

/// A gradient contribution to one geometry-map entry. `channel` indexes
/// the stacked 12-channel view (8 corner channels, then 4 boundary channels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryIncrement {
    pub x: usize,
    pub y: usize,
    pub channel: usize,
    pub value: f64,
}

/// Routes point gradients back onto the geometry-map entries that produced
/// the points: every pixel of a point's region receives `ΔP / |region|` on
/// the offset channels that point was read from. Along-axis gradients of
/// band points flow to the pair they were blended from.
pub fn scatter_point_grads(d_points: &[Point2], trace: &FiducialTrace) -> Result<Vec<GeometryIncrement>> {
    if d_points.len() != trace.origins.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} point gradients for {} fiducials",
            d_points.len(),
            trace.origins.len()
        )));
    }
    let mut g = d_points.to_vec();
    let mut out = Vec::new();
    for &k in trace.order.iter().rev() {
        let gk = g[k];
        match &trace.origins[k] {
            PointOrigin::Corner { pixels, channels } => {
                if pixels.is_empty() {
                    return Err(Error::EmptyRegion);
                }
                let inv = 1.0 / pixels.len() as f64;
                for &(x, y) in pixels {
                    out.push(GeometryIncrement { x, y, channel: channels[0], value: gk.x * inv });
                    out.push(GeometryIncrement { x, y, channel: channels[1], value: gk.y * inv });
                }
            }
            PointOrigin::Band { pixels, axis, channel, parents, weights } => {
                if pixels.is_empty() {
                    return Err(Error::EmptyRegion);
                }
                let (along, across) = match axis {
                    SpanAxis::Horizontal => (gk.x, gk.y),
                    SpanAxis::Vertical => (gk.y, gk.x),
                };
                let inv = 1.0 / pixels.len() as f64;
                for &(x, y) in pixels {
                    out.push(GeometryIncrement { x, y, channel: 8 + channel, value: across * inv });
                }
                let push = |p: Point2, w: f64| match axis {
                    SpanAxis::Horizontal => Point2::new(p.x + w * along, p.y),
                    SpanAxis::Vertical => Point2::new(p.x, p.y + w * along),
                };
                g[parents.0] = push(g[parents.0], weights.0);
                g[parents.1] = push(g[parents.1], weights.1);
            }
            PointOrigin::Interpolated { parents, weights } => {
                g[parents.0] = g[parents.0] + gk * weights.0;
                g[parents.1] = g[parents.1] + gk * weights.1;
            }
        }
    }
    Ok(out)
}

/// Directional derivative of generation: how the points move when the
/// stacked `H × W × 12` geometry values move by `v` (band and region
/// membership held fixed). [`scatter_point_grads`] is its adjoint.
pub fn trace_tangent(trace: &FiducialTrace, v: &Grid<f64>) -> Result<Vec<Point2>> {
    if v.channels != 12 {
        return Err(Error::ShapeMismatch(alloc::format!("tangent has {} channels, expected 12", v.channels)));
    }
    let mean = |pixels: &[Pixel], c: usize| -> Result<f64> {
        if pixels.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(pixels.iter().map(|&(x, y)| *v.at(x, y, c)).sum::<f64>() / pixels.len() as f64)
    };
    let mut dp = vec![Point2::default(); trace.origins.len()];
    for &k in &trace.order {
        dp[k] = match &trace.origins[k] {
            PointOrigin::Corner { pixels, channels } => Point2::new(mean(pixels, channels[0])?, mean(pixels, channels[1])?),
            PointOrigin::Band { pixels, axis, channel, parents, weights } => {
                let along = weights.0 * axis.along(dp[parents.0]) + weights.1 * axis.along(dp[parents.1]);
                axis.compose(along, mean(pixels, 8 + channel)?)
            }
            PointOrigin::Interpolated { parents, weights } => dp[parents.0] * weights.0 + dp[parents.1] * weights.1,
        };
    }
    Ok(dp)
}

/// Adds increments into a dense `H × W × 12` gradient grid.
pub fn accumulate_increments(grid: &mut Grid<f64>, increments: &[GeometryIncrement]) {
    for inc in increments {
        *grid.at_mut(inc.x, inc.y, inc.channel) += inc.value;
    }
}
