//! Ground-truth score and geometry maps from polygon annotations.
//!
//! Each instance is rasterized as a full-interior center region, then a head
//! strip and a tail strip shrunk inward from the head/tail edges, and finally
//! a band straddling the top and bottom edges which overwrites everything
//! else. Instances are overlaid in annotation order.

use alloc::vec::Vec;

use crate::geom::{
    contains_point, nearest_on_polyline, polyline_length, signed_area, BoundaryChains, Point2,
    PolygonAnnotation,
};
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
#[repr(u8)]
pub enum RegionClass {
    #[default]
    Background = 0,
    Center = 1,
    Head = 2,
    Tail = 3,
    TopBottomBoundary = 4,
}

impl RegionClass {
    pub const ALL: [RegionClass; 5] = [
        RegionClass::Background,
        RegionClass::Center,
        RegionClass::Head,
        RegionClass::Tail,
        RegionClass::TopBottomBoundary,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

/// Band widths as ratios of the polygon's shortest edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandWidthConfig {
    pub delta_topbottom: f64,
    pub delta_headtail: f64,
}

impl Default for BandWidthConfig {
    fn default() -> Self {
        Self { delta_topbottom: 0.2, delta_headtail: 0.3 }
    }
}

impl BandWidthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |d: f64| d > 0.0 && d <= 0.5;
        if ok(self.delta_topbottom) && ok(self.delta_headtail) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("band ratios must lie in (0, 0.5]"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    pub bands: BandWidthConfig,
    /// Mask weight for boundary-offset channels along the text's long axis.
    pub proximity_weight: f32,
    /// Instances whose shortest edge is at or below this get no geometry supervision.
    pub tiny_min_len: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { bands: BandWidthConfig::default(), proximity_weight: 0.1, tiny_min_len: 4.0 }
    }
}

/// Per-pixel class labels plus the annotation (1-based, 0 = none) that
/// produced each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub labels: Grid<RegionClass>,
    pub instance_ids: Grid<u32>,
}

impl ScoreMaps {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            labels: Grid::new(width, height, 1, RegionClass::Background),
            instance_ids: Grid::new(width, height, 1, 0),
        }
    }

    pub fn width(&self) -> usize {
        self.labels.width
    }

    pub fn height(&self) -> usize {
        self.labels.height
    }

    pub fn label(&self, x: usize, y: usize) -> RegionClass {
        *self.labels.at(x, y, 0)
    }

    pub fn instance(&self, x: usize, y: usize) -> u32 {
        *self.instance_ids.at(x, y, 0)
    }

    pub fn count(&self, class: RegionClass) -> usize {
        self.labels.data.iter().filter(|&&c| c == class).count()
    }
}

/// Corner channels: head pixels use 0..4 (1st corner dx, dy, 4th corner
/// dx, dy); tail pixels use 4..8 (2nd corner dx, dy, 3rd corner dx, dy).
pub const HEAD_CHANNELS: [usize; 4] = [0, 1, 2, 3];
pub const TAIL_CHANNELS: [usize; 4] = [4, 5, 6, 7];
/// Boundary channels: 0..2 toward the top chain, 2..4 toward the bottom chain.
pub const TOP_CHANNELS: [usize; 2] = [0, 1];
pub const BOTTOM_CHANNELS: [usize; 2] = [2, 3];
/// Offset of the boundary channels inside the 12-channel valid mask.
pub const BOUNDARY_MASK_BASE: usize = 8;

/// Regression targets. Offsets are raw pixels, `target = pixel + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMaps {
    pub corner_offsets: Grid<f32>,
    pub boundary_offsets: Grid<f32>,
    pub valid_mask: Grid<f32>,
}

impl GeometryMaps {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            corner_offsets: Grid::new(width, height, 8, 0.0),
            boundary_offsets: Grid::new(width, height, 4, 0.0),
            valid_mask: Grid::new(width, height, 12, 0.0),
        }
    }

    pub fn width(&self) -> usize {
        self.corner_offsets.width
    }

    pub fn height(&self) -> usize {
        self.corner_offsets.height
    }

    /// Value of channel `c` of the stacked 12-channel view (8 corner + 4 boundary).
    pub fn stacked(&self, x: usize, y: usize, c: usize) -> f32 {
        if c < 8 {
            *self.corner_offsets.at(x, y, c)
        } else {
            *self.boundary_offsets.at(x, y, c - 8)
        }
    }

    pub fn stacked_mut(&mut self, x: usize, y: usize, c: usize) -> &mut f32 {
        if c < 8 {
            self.corner_offsets.at_mut(x, y, c)
        } else {
            self.boundary_offsets.at_mut(x, y, c - 8)
        }
    }

    /// Builds maps from a `H × W × 12` array of stacked channels; the valid
    /// mask is left empty.
    pub fn from_stacked(stacked: &Grid<f32>) -> Result<Self> {
        if stacked.channels != 12 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "geometry tensor has {} channels, expected 12",
                stacked.channels
            )));
        }
        let mut geo = Self::zeros(stacked.width, stacked.height);
        for y in 0..stacked.height {
            for x in 0..stacked.width {
                for c in 0..12 {
                    *geo.stacked_mut(x, y, c) = *stacked.at(x, y, c);
                }
            }
        }
        Ok(geo)
    }

    pub fn to_stacked(&self) -> Grid<f32> {
        let mut out = Grid::new(self.width(), self.height(), 12, 0.0f32);
        for y in 0..self.height() {
            for x in 0..self.width() {
                for c in 0..12 {
                    *out.at_mut(x, y, c) = self.stacked(x, y, c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelWarning {
    /// Instance was not rasterized at all.
    Skipped { instance: usize, reason: SkipReason },
    /// Instance was rasterized but its shortest edge is too small for
    /// geometry supervision.
    Tiny { instance: usize, min_len: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkipReason {
    NonPositiveMinLen,
    Invalid(Error),
}

/// Geometry of one annotation that both map generators need.
#[derive(Debug, Clone)]
pub struct InstanceGeometry {
    pub chains: BoundaryChains,
    pub corners: [Point2; 4],
    pub min_len: f64,
    /// Sign that turns the left normal of a directed edge into the inward normal.
    inward: f64,
    /// True when the long text axis runs along x.
    pub horizontal: bool,
}

impl InstanceGeometry {
    pub fn new(poly: &PolygonAnnotation) -> Result<Self> {
        let chains = poly.split_chains()?;
        let c = poly.corners.ok_or(Error::CornersUnset)?;
        let corners = c.map(|i| poly.points[i]);
        let top_len = polyline_length(&chains.top);
        let head_len = polyline_length(&chains.head);
        let axis = if top_len >= head_len {
            chains.top[chains.top.len() - 1] - chains.top[0]
        } else {
            chains.head[chains.head.len() - 1] - chains.head[0]
        };
        Ok(Self {
            min_len: poly.min_edge_len(),
            inward: if signed_area(&poly.points) >= 0.0 { 1.0 } else { -1.0 },
            horizontal: libm::fabs(axis.x) >= libm::fabs(axis.y),
            chains,
            corners,
        })
    }

    fn inward_normal(&self, a: Point2, b: Point2) -> Point2 {
        let d = (b - a) * (1.0 / a.dist(b));
        Point2::new(-d.y, d.x) * self.inward
    }

    /// Inside the strip obtained by shifting `chain` inward by `width`.
    fn in_inner_strip(&self, chain: &[Point2], p: Point2, width: f64) -> bool {
        chain.windows(2).any(|w| {
            let (a, b) = (w[0], w[1]);
            let len = a.dist(b);
            if len == 0.0 {
                return false;
            }
            let t = (p - a).dot(b - a) / (len * len);
            let s = (p - a).dot(self.inward_normal(a, b));
            (0.0..=1.0).contains(&t) && (-1e-9..=width).contains(&s)
        })
    }

    /// Within `half` of the chain on either side, excluding end caps.
    fn in_straddle_band(&self, chain: &[Point2], p: Point2, half: f64) -> bool {
        let on_segment = chain.windows(2).any(|w| {
            let (a, b) = (w[0], w[1]);
            let len = a.dist(b);
            if len == 0.0 {
                return false;
            }
            let t = (p - a).dot(b - a) / (len * len);
            let s = (p - a).dot(self.inward_normal(a, b));
            (0.0..=1.0).contains(&t) && libm::fabs(s) <= half
        });
        on_segment
            || (chain.len() > 2 && chain[1..chain.len() - 1].iter().any(|&v| v.dist(p) <= half))
    }

    fn classify(&self, ring: &[Point2], p: Point2, bands: &BandWidthConfig) -> RegionClass {
        let tb_half = 0.5 * bands.delta_topbottom * self.min_len;
        let ht = bands.delta_headtail * self.min_len;
        if self.in_straddle_band(&self.chains.top, p, tb_half)
            || self.in_straddle_band(&self.chains.bottom, p, tb_half)
        {
            RegionClass::TopBottomBoundary
        } else if !contains_point(ring, p) {
            RegionClass::Background
        } else if self.in_inner_strip(&self.chains.tail, p, ht) {
            RegionClass::Tail
        } else if self.in_inner_strip(&self.chains.head, p, ht) {
            RegionClass::Head
        } else {
            RegionClass::Center
        }
    }
}

/// Rasterizes one instance into `(x, y, class)` triples over the canvas.
fn rasterize_instance(
    poly: &PolygonAnnotation,
    geom: &InstanceGeometry,
    width: usize,
    height: usize,
    bands: &BandWidthConfig,
) -> Vec<(usize, usize, RegionClass)> {
    let pad = 0.5 * bands.delta_topbottom * geom.min_len + 1.0;
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &poly.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let clamp = |v: f64, hi: usize| -> usize {
        if v <= 0.0 {
            0
        } else {
            (v as usize).min(hi)
        }
    };
    let (xs, xe) = (clamp(libm::floor(x0 - pad), width), clamp(libm::ceil(x1 + pad) + 1.0, width));
    let (ys, ye) =
        (clamp(libm::floor(y0 - pad), height), clamp(libm::ceil(y1 + pad) + 1.0, height));
    let mut out = Vec::new();
    for y in ys..ye {
        for x in xs..xe {
            let p = Point2::new(x as f64, y as f64);
            let class = geom.classify(&poly.points, p, bands);
            if class != RegionClass::Background {
                out.push((x, y, class));
            }
        }
    }
    out
}

/// Builds the five-class score map. Pixel `(x, y)` is sampled at its integer
/// coordinate. Later annotations overwrite earlier ones.
pub fn gen_score_maps(
    annotations: &[PolygonAnnotation],
    width: usize,
    height: usize,
    cfg: &LabelConfig,
) -> Result<(ScoreMaps, Vec<LabelWarning>)> {
    cfg.bands.validate()?;
    let mut maps = ScoreMaps::empty(width, height);
    let mut warnings = Vec::new();
    for (idx, poly) in annotations.iter().enumerate() {
        let geom = match poly.validate().and_then(|_| InstanceGeometry::new(poly)) {
            Ok(g) => g,
            Err(e) => {
                warnings.push(LabelWarning::Skipped { instance: idx, reason: SkipReason::Invalid(e) });
                continue;
            }
        };
        if !(geom.min_len > 0.0) {
            warnings.push(LabelWarning::Skipped {
                instance: idx,
                reason: SkipReason::NonPositiveMinLen,
            });
            continue;
        }
        if geom.min_len <= cfg.tiny_min_len {
            warnings.push(LabelWarning::Tiny { instance: idx, min_len: geom.min_len });
        }
        for (x, y, class) in rasterize_instance(poly, &geom, width, height, &cfg.bands) {
            *maps.labels.at_mut(x, y, 0) = class;
            *maps.instance_ids.at_mut(x, y, 0) = idx as u32 + 1;
        }
    }
    Ok((maps, warnings))
}

/// Builds corner/boundary offset targets and their supervision mask for a
/// score map produced from the same annotations.
pub fn gen_geometry_maps(
    annotations: &[PolygonAnnotation],
    score: &ScoreMaps,
    cfg: &LabelConfig,
) -> Result<GeometryMaps> {
    let (w, h) = (score.width(), score.height());
    let geoms: Vec<Option<InstanceGeometry>> =
        annotations.iter().map(|p| InstanceGeometry::new(p).ok()).collect();
    let mut geo = GeometryMaps::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let class = score.label(x, y);
            let id = score.instance(x, y);
            if id == 0 || !matches!(class, RegionClass::Head | RegionClass::Tail | RegionClass::Center)
            {
                continue;
            }
            let g = geoms
                .get(id as usize - 1)
                .and_then(Option::as_ref)
                .ok_or(Error::UnknownInstance(id))?;
            let p = Point2::new(x as f64, y as f64);
            let weight = if g.min_len <= cfg.tiny_min_len { 0.0 } else { 1.0 };
            match class {
                RegionClass::Head | RegionClass::Tail => {
                    let (targets, channels) = if class == RegionClass::Head {
                        ([g.corners[0], g.corners[3]], HEAD_CHANNELS)
                    } else {
                        ([g.corners[1], g.corners[2]], TAIL_CHANNELS)
                    };
                    for (k, t) in targets.iter().enumerate() {
                        let d = *t - p;
                        *geo.corner_offsets.at_mut(x, y, channels[2 * k]) = d.x as f32;
                        *geo.corner_offsets.at_mut(x, y, channels[2 * k + 1]) = d.y as f32;
                        *geo.valid_mask.at_mut(x, y, channels[2 * k]) = weight;
                        *geo.valid_mask.at_mut(x, y, channels[2 * k + 1]) = weight;
                    }
                }
                RegionClass::Center => {
                    let (wx, wy) = if g.horizontal {
                        (cfg.proximity_weight, 1.0)
                    } else {
                        (1.0, cfg.proximity_weight)
                    };
                    for (chain, ch) in [(&g.chains.top, TOP_CHANNELS), (&g.chains.bottom, BOTTOM_CHANNELS)]
                    {
                        let d = nearest_on_polyline(p, chain) - p;
                        *geo.boundary_offsets.at_mut(x, y, ch[0]) = d.x as f32;
                        *geo.boundary_offsets.at_mut(x, y, ch[1]) = d.y as f32;
                        *geo.valid_mask.at_mut(x, y, BOUNDARY_MASK_BASE + ch[0]) = wx * weight;
                        *geo.valid_mask.at_mut(x, y, BOUNDARY_MASK_BASE + ch[1]) = wy * weight;
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    Ok(geo)
}

/// Convenience wrapper producing both maps.
pub fn gen_labels(
    annotations: &[PolygonAnnotation],
    width: usize,
    height: usize,
    cfg: &LabelConfig,
) -> Result<(ScoreMaps, GeometryMaps, Vec<LabelWarning>)> {
    let (score, warnings) = gen_score_maps(annotations, width, height, cfg)?;
    let geo = gen_geometry_maps(annotations, &score, cfg)?;
    Ok((score, geo, warnings))
}

/// One-hot `H × W × 5` class scores for a label map.
pub fn one_hot(score: &ScoreMaps) -> Grid<f32> {
    let mut out = Grid::new(score.width(), score.height(), 5, 0.0f32);
    for y in 0..score.height() {
        for x in 0..score.width() {
            *out.at_mut(x, y, score.label(x, y) as usize) = 1.0;
        }
    }
    out
}

/// Number of pixels per class for the given instance id.
pub fn class_areas(score: &ScoreMaps, instance: u32) -> [usize; 5] {
    let mut areas = [0usize; 5];
    for (c, id) in score.labels.data.iter().zip(&score.instance_ids.data) {
        if *id == instance {
            areas[*c as usize] += 1;
        }
    }
    areas
}
