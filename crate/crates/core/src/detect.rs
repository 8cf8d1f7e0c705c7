//! Detection inference: ordered class overlay, component extraction,
//! head/tail matching and polygon output.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::fiducial::{generate_fiducials, FiducialConfig, FiducialSet, InstanceRegions, Pixel};
use crate::geom::{is_self_intersecting, signed_area, Point2};
use crate::label::{GeometryMaps, RegionClass};
use crate::{Error, Grid, Result};

/// Binarizes each class channel of an `H × W × 5` score array at its
/// threshold and overlays center, head, tail and top&bottom boundary in
/// that order. Channel 0 (background) is ignored.
pub fn overlay_classes(scores: &Grid<f32>, thresholds: &[f32; 5]) -> Result<Grid<RegionClass>> {
    if scores.channels != 5 {
        return Err(Error::ShapeMismatch(alloc::format!(
            "class scores have {} channels, expected 5",
            scores.channels
        )));
    }
    let mut out = Grid::new(scores.width, scores.height, 1, RegionClass::Background);
    let order = [
        RegionClass::Center,
        RegionClass::Head,
        RegionClass::Tail,
        RegionClass::TopBottomBoundary,
    ];
    for y in 0..scores.height {
        for x in 0..scores.width {
            let px = scores.pixel(x, y);
            for class in order {
                let c = class as usize;
                if px[c] > thresholds[c] {
                    *out.at_mut(x, y, 0) = class;
                }
            }
        }
    }
    Ok(out)
}

/// 8-connected components of one class. Ids are dense `1..=K` in raster
/// order of each component's first pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub ids: Grid<u32>,
    pub class: RegionClass,
    /// Pixel count of component `k` at index `k - 1`.
    pub areas: Vec<usize>,
    /// Raster index of the first pixel of component `k` at index `k - 1`.
    pub first_pixel: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    pub fn area(&self, id: u32) -> usize {
        self.areas[id as usize - 1]
    }

    pub fn pixels(&self, id: u32) -> Vec<Pixel> {
        let mut out = Vec::with_capacity(self.area(id));
        for y in 0..self.ids.height {
            for x in 0..self.ids.width {
                if *self.ids.at(x, y, 0) == id {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

pub fn connected_components(labels: &Grid<RegionClass>, class: RegionClass) -> ComponentLabeling {
    let (w, h) = (labels.width, labels.height);
    let mut ids = Grid::new(w, h, 1, 0u32);
    let mut areas = Vec::new();
    let mut first_pixel = Vec::new();
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if *labels.at(x0, y0, 0) != class || *ids.at(x0, y0, 0) != 0 {
                continue;
            }
            let id = areas.len() as u32 + 1;
            let mut area = 0;
            *ids.at_mut(x0, y0, 0) = id;
            stack.push((x0, y0));
            while let Some((x, y)) = stack.pop() {
                area += 1;
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if *labels.at(nx, ny, 0) == class && *ids.at(nx, ny, 0) == 0 {
                            *ids.at_mut(nx, ny, 0) = id;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            areas.push(area);
            first_pixel.push(y0 * w + x0);
        }
    }
    ComponentLabeling { ids, class, areas, first_pixel }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterReason {
    MissingHead,
    MissingTail,
    MissingHeadAndTail,
    FiducialFailure,
}

impl FilterReason {
    pub fn code(self) -> &'static str {
        match self {
            FilterReason::MissingHead => "missing_head",
            FilterReason::MissingTail => "missing_tail",
            FilterReason::MissingHeadAndTail => "missing_head_and_tail",
            FilterReason::FiducialFailure => "fiducial_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedInstance {
    pub center_component: u32,
    pub head_component: Option<u32>,
    pub tail_component: Option<u32>,
    pub center_area: usize,
    pub head_area: usize,
    pub tail_area: usize,
    pub fiducials: Option<FiducialSet>,
    pub polygon: Option<Vec<Point2>>,
    /// `None` when the instance is reported.
    pub filtered: Option<FilterReason>,
    pub self_intersecting: bool,
}

impl DetectedInstance {
    pub fn is_reported(&self) -> bool {
        self.filtered.is_none()
    }
}

/// Picks, for every center component, the largest head and tail component
/// within `radius` pixels (Chebyshev). Area ties go to the component whose
/// first pixel comes first in raster order, so the result does not depend
/// on how components were numbered.
pub fn match_head_tail_with_radius(
    center: &ComponentLabeling,
    head: &ComponentLabeling,
    tail: &ComponentLabeling,
    radius: usize,
) -> Vec<DetectedInstance> {
    let (w, h) = (center.ids.width, center.ids.height);
    let mut neighbours: Vec<(BTreeSet<u32>, BTreeSet<u32>)> =
        vec![(BTreeSet::new(), BTreeSet::new()); center.count()];
    for y in 0..h {
        for x in 0..w {
            let c = *center.ids.at(x, y, 0);
            if c == 0 {
                continue;
            }
            let slot = &mut neighbours[c as usize - 1];
            for ny in y.saturating_sub(radius)..=(y + radius).min(h - 1) {
                for nx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                    let hid = *head.ids.at(nx, ny, 0);
                    if hid != 0 {
                        slot.0.insert(hid);
                    }
                    let tid = *tail.ids.at(nx, ny, 0);
                    if tid != 0 {
                        slot.1.insert(tid);
                    }
                }
            }
        }
    }
    let best = |labeling: &ComponentLabeling, set: &BTreeSet<u32>| -> Option<u32> {
        set.iter().copied().max_by(|&a, &b| {
            labeling
                .area(a)
                .cmp(&labeling.area(b))
                .then(labeling.first_pixel[b as usize - 1].cmp(&labeling.first_pixel[a as usize - 1]))
        })
    };
    neighbours
        .iter()
        .enumerate()
        .map(|(i, (hs, ts))| {
            let head_component = best(head, hs);
            let tail_component = best(tail, ts);
            let filtered = match (head_component, tail_component) {
                (Some(_), Some(_)) => None,
                (None, Some(_)) => Some(FilterReason::MissingHead),
                (Some(_), None) => Some(FilterReason::MissingTail),
                (None, None) => Some(FilterReason::MissingHeadAndTail),
            };
            DetectedInstance {
                center_component: i as u32 + 1,
                head_component,
                tail_component,
                center_area: center.areas[i],
                head_area: head_component.map_or(0, |id| head.area(id)),
                tail_area: tail_component.map_or(0, |id| tail.area(id)),
                fiducials: None,
                polygon: None,
                filtered,
                self_intersecting: false,
            }
        })
        .collect()
}

/// [`match_head_tail_with_radius`] with a 2-pixel neighbourhood.
pub fn match_head_tail(
    center: &ComponentLabeling,
    head: &ComponentLabeling,
    tail: &ComponentLabeling,
) -> Vec<DetectedInstance> {
    match_head_tail_with_radius(center, head, tail, 2)
}

/// The closed ring `P1..P2N`. The boolean flags a self-intersecting ring,
/// which is still returned.
pub fn instance_polygon(instance: &DetectedInstance) -> Result<(Vec<Point2>, bool)> {
    let f = instance.fiducials.as_ref().ok_or(Error::MissingFiducials)?;
    Ok((f.points.clone(), is_self_intersecting(&f.points)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub fiducials: FiducialConfig,
    pub thresholds: [f32; 5],
    pub match_radius: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { fiducials: FiducialConfig::default(), thresholds: [0.5; 5], match_radius: 2 }
    }
}

/// Components, matching and fiducials for an overlaid label map. Filtered
/// instances are kept with their reason.
pub fn detect_from_labels(
    labels: &Grid<RegionClass>,
    geo: &GeometryMaps,
    cfg: &DetectConfig,
) -> Result<Vec<DetectedInstance>> {
    if labels.width != geo.width() || labels.height != geo.height() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "labels are {}x{}, geometry maps {}x{}",
            labels.width,
            labels.height,
            geo.width(),
            geo.height()
        )));
    }
    cfg.fiducials.validate()?;
    let center = connected_components(labels, RegionClass::Center);
    let head = connected_components(labels, RegionClass::Head);
    let tail = connected_components(labels, RegionClass::Tail);
    let mut instances = match_head_tail_with_radius(&center, &head, &tail, cfg.match_radius);
    for inst in instances.iter_mut().filter(|i| i.is_reported()) {
        let regions = InstanceRegions::from_ids(
            &center.ids,
            inst.center_component,
            &head.ids,
            inst.head_component,
            &tail.ids,
            inst.tail_component,
        );
        match generate_fiducials(&regions, geo, &cfg.fiducials) {
            Ok(set) => {
                inst.self_intersecting = is_self_intersecting(&set.points);
                inst.polygon = Some(set.points.clone());
                inst.fiducials = Some(set);
            }
            Err(_) => inst.filtered = Some(FilterReason::FiducialFailure),
        }
    }
    Ok(instances)
}

/// Full inference from per-class scores.
pub fn detect(scores: &Grid<f32>, geo: &GeometryMaps, cfg: &DetectConfig) -> Result<Vec<DetectedInstance>> {
    let labels = overlay_classes(scores, &cfg.thresholds)?;
    detect_from_labels(&labels, geo, cfg)
}

// --- polygon IoU -----------------------------------------------------------

fn clip_convex(subject: &[Point2], clip: &[Point2; 3]) -> Vec<Point2> {
    // both triangles are positively oriented
    let mut out: Vec<Point2> = subject.to_vec();
    for i in 0..3 {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % 3]);
        let side = |p: Point2| (b - a).cross(p - a);
        let input = core::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(prev.lerp(cur, sp / (sp - sc)));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(prev.lerp(cur, sp / (sp - sc)));
            }
        }
    }
    out
}

/// Fan triangles of a ring with their orientation signs; the signed sum of
/// their indicator functions equals the ring's winding number.
fn fan(ring: &[Point2]) -> Vec<([Point2; 3], f64)> {
    let o = ring[0];
    ring.windows(2)
        .skip(1)
        .filter_map(|w| {
            let tri = [o, w[0], w[1]];
            let a = signed_area(&tri);
            if a > 0.0 {
                Some((tri, 1.0))
            } else if a < 0.0 {
                Some(([o, w[1], w[0]], -1.0))
            } else {
                None
            }
        })
        .collect()
}

/// Intersection area of two simple rings, either orientation.
pub fn intersection_area(a: &[Point2], b: &[Point2]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let sa = signed_area(a).signum();
    let sb = signed_area(b).signum();
    let (fa, fb) = (fan(a), fan(b));
    let mut total = 0.0;
    for (ta, ka) in &fa {
        for (tb, kb) in &fb {
            let piece = clip_convex(ta, tb);
            if piece.len() >= 3 {
                total += ka * kb * signed_area(&piece);
            }
        }
    }
    libm::fabs(total * sa * sb)
}

/// Intersection over union of two simple polygons; 0 when either has no area.
pub fn polygon_iou(a: &[Point2], b: &[Point2]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let (area_a, area_b) = (libm::fabs(signed_area(a)), libm::fabs(signed_area(b)));
    if area_a == 0.0 || area_b == 0.0 {
        return 0.0;
    }
    let inter = intersection_area(a, b).min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    if union <= 0.0 { 0.0 } else { (inter / union).clamp(0.0, 1.0) }
}
