//! Synthetic scenes: digit strings rendered along straight, arc or sine
//! baselines, annotated with 14-point ribbon polygons.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::font::{ink, CELL_W, GLYPH_H};
use crate::geom::{Point2, PolygonAnnotation};
use crate::stm::RegionGrid;
use crate::{Error, Grid, Result};

/// Points per polygon side; the ribbon polygon has twice as many.
pub const SIDE_POINTS: usize = 7;
/// Corner indices of the 14-point ribbon layout.
pub const RIBBON_CORNERS: [usize; 4] = [0, SIDE_POINTS - 1, SIDE_POINTS, 2 * SIDE_POINTS - 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Straight,
    /// Circular arc turning by the bend angle.
    Arc,
    /// One period of a meander whose tangent swings by ± half the bend angle.
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeMix {
    Only(Baseline),
    /// Arc or sine with equal probability.
    Curved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_instances: usize,
    /// Inclusive range of string lengths.
    pub chars: (usize, usize),
    /// Pixels per glyph dot.
    pub glyph_size: usize,
    pub shape: ShapeMix,
    /// Inclusive range of the total bend, degrees.
    pub bend_deg: (f64, f64),
    /// Maximum absolute rotation of the whole ribbon, degrees.
    pub max_rotation_deg: f64,
    /// Minimum gap between instance bounding boxes and to the image border.
    pub margin: f64,
    pub placement_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 160,
            n_instances: 2,
            chars: (5, 7),
            glyph_size: 3,
            shape: ShapeMix::Only(Baseline::Arc),
            bend_deg: (15.0, 45.0),
            max_rotation_deg: 10.0,
            margin: 4.0,
            placement_attempts: 50,
        }
    }
}

impl SceneConfig {
    pub fn straight() -> Self {
        Self { shape: ShapeMix::Only(Baseline::Straight), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("scene must have a positive size"));
        }
        if self.chars.0 == 0 || self.chars.0 > self.chars.1 || self.glyph_size == 0 {
            return Err(Error::InvalidConfig("string length range and glyph size must be positive"));
        }
        if !(self.bend_deg.0 >= 0.0 && self.bend_deg.0 <= self.bend_deg.1 && self.bend_deg.1 < 180.0) {
            return Err(Error::InvalidConfig("bend range must lie in [0, 180) degrees"));
        }
        if !(self.max_rotation_deg >= 0.0 && self.margin >= 0.0) {
            return Err(Error::InvalidConfig("rotation and margin must be non-negative"));
        }
        Ok(())
    }
}

/// A rendered text ribbon before placement: dense centerline samples with
/// arc length, position and tangent angle.
#[derive(Debug, Clone)]
pub struct Ribbon {
    pub length: f64,
    pub thickness: f64,
    samples: Vec<(f64, Point2, f64)>,
}

const DENSE_STEP: f64 = 0.05;
const SEARCH_STRIDE: usize = 10;

impl Ribbon {
    /// Integrates the tangent angle `phi(t)` over `[0, length]`.
    pub fn from_tangent(length: f64, thickness: f64, phi: impl Fn(f64) -> f64) -> Self {
        let steps = libm::ceil(length / DENSE_STEP).max(1.0) as usize;
        let dt = length / steps as f64;
        let mut samples = Vec::with_capacity(steps + 1);
        let mut p = Point2::default();
        samples.push((0.0, p, phi(0.0)));
        for k in 1..=steps {
            let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
            // midpoint rule on the unit tangent
            let am = phi(0.5 * (t0 + t1));
            p = p + Point2::new(libm::cos(am), libm::sin(am)) * dt;
            samples.push((t1, p, phi(t1)));
        }
        Self { length, thickness, samples }
    }

    fn sample(&self, t: f64) -> (Point2, f64) {
        let dt = self.length / (self.samples.len() - 1) as f64;
        let f = (t / dt).clamp(0.0, (self.samples.len() - 1) as f64);
        let k = (libm::floor(f) as usize).min(self.samples.len() - 2);
        let w = f - k as f64;
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        (a.1.lerp(b.1, w), a.2 + (b.2 - a.2) * w)
    }

    /// Image position of ribbon coordinate `(t, v)`; `v` grows toward the
    /// bottom side of the text.
    pub fn point(&self, t: f64, v: f64) -> Point2 {
        let (c, a) = self.sample(t);
        c + Point2::new(-libm::sin(a), libm::cos(a)) * v
    }

    /// `2·SIDE_POINTS` polygon: top side head→tail, bottom side tail→head.
    pub fn polygon(&self) -> Vec<Point2> {
        let h = 0.5 * self.thickness;
        let ts: Vec<f64> = (0..SIDE_POINTS).map(|i| i as f64 * self.length / (SIDE_POINTS - 1) as f64).collect();
        let mut pts: Vec<Point2> = ts.iter().map(|&t| self.point(t, -h)).collect();
        pts.extend(ts.iter().rev().map(|&t| self.point(t, h)));
        pts
    }

    fn translate(&mut self, d: Point2) {
        for s in &mut self.samples {
            s.1 = s.1 + d;
        }
    }

    /// Index of the centerline sample nearest to `p`.
    fn nearest_sample(&self, p: Point2) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for k in (0..self.samples.len()).step_by(SEARCH_STRIDE) {
            let d = self.samples[k].1.dist(p);
            if d < best.0 {
                best = (d, k);
            }
        }
        let lo = best.1.saturating_sub(SEARCH_STRIDE);
        let hi = (best.1 + SEARCH_STRIDE).min(self.samples.len() - 1);
        for k in lo..=hi {
            let d = self.samples[k].1.dist(p);
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    /// Ribbon coordinates of `p` in the local frame of sample `k`.
    fn project(&self, k: usize, p: Point2) -> (f64, f64) {
        let (t, c, a) = self.samples[k];
        let rel = p - c;
        (t + rel.dot(Point2::new(libm::cos(a), libm::sin(a))), rel.dot(Point2::new(-libm::sin(a), libm::cos(a))))
    }

    /// Ribbon coordinates of an image point, from the nearest centerline
    /// sample refined by a local projection.
    pub fn locate(&self, p: Point2) -> (f64, f64) {
        self.project(self.nearest_sample(p), p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// `H × W × 1`, ink = 1, background = 0.
    pub image: RegionGrid,
    pub annotations: Vec<PolygonAnnotation>,
    pub rng_seed: u64,
    /// Instances requested but not placed without overlap.
    pub dropped: usize,
}

impl SyntheticScene {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    /// Digit values of instance `i`.
    pub fn digits(&self, i: usize) -> Vec<u8> {
        self.annotations[i]
            .transcription
            .as_deref()
            .unwrap_or("")
            .bytes()
            .filter(u8::is_ascii_digit)
            .map(|b| b - b'0')
            .collect()
    }
}

fn bbox(pts: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    (lo, hi)
}

fn make_ribbon(rng: &mut ChaCha8Rng, cfg: &SceneConfig, n_chars: usize) -> Ribbon {
    let s = cfg.glyph_size as f64;
    let length = (n_chars * CELL_W) as f64 * s;
    let thickness = GLYPH_H as f64 * s;
    let baseline = match cfg.shape {
        ShapeMix::Only(b) => b,
        ShapeMix::Curved => {
            if rng.random::<bool>() {
                Baseline::Arc
            } else {
                Baseline::Sine
            }
        }
    };
    let bend = rng.random_range(cfg.bend_deg.0..=cfg.bend_deg.1).to_radians();
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let max_rot = cfg.max_rotation_deg.to_radians();
    let rot = if max_rot > 0.0 { rng.random_range(-max_rot..=max_rot) } else { 0.0 };
    match baseline {
        Baseline::Straight => Ribbon::from_tangent(length, thickness, |_| rot),
        Baseline::Arc => Ribbon::from_tangent(length, thickness, |t| rot + sign * bend * (t / length - 0.5)),
        Baseline::Sine => {
            Ribbon::from_tangent(length, thickness, |t| rot + sign * 0.5 * bend * libm::cos(2.0 * PI * t / length))
        }
    }
}

fn render(image: &mut RegionGrid, ribbon: &Ribbon, digits: &[u8], glyph_size: usize) {
    const SUB: usize = 3;
    let s = glyph_size as f64;
    let (lo, hi) = bbox(&ribbon.polygon());
    let pad = 0.25 * ribbon.thickness + 2.0;
    let x0 = libm::floor(lo.x - pad).max(0.0) as usize;
    let y0 = libm::floor(lo.y - pad).max(0.0) as usize;
    let x1 = (libm::ceil(hi.x + pad).max(0.0) as usize).min(image.width.saturating_sub(1));
    let y1 = (libm::ceil(hi.y + pad).max(0.0) as usize).min(image.height.saturating_sub(1));
    let half = 0.5 * ribbon.thickness;
    for y in y0..=y1 {
        for x in x0..=x1 {
            // sub-samples are within half a pixel: share the nearest centerline sample
            let k = ribbon.nearest_sample(Point2::new(x as f64, y as f64));
            let mut hits = 0usize;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let p = Point2::new(
                        x as f64 + (sx as f64 + 0.5) / SUB as f64 - 0.5,
                        y as f64 + (sy as f64 + 0.5) / SUB as f64 - 0.5,
                    );
                    let (t, v) = ribbon.project(k, p);
                    if t < 0.0 || t >= ribbon.length || libm::fabs(v) > half {
                        continue;
                    }
                    let cell = libm::floor(t / (CELL_W as f64 * s)) as usize;
                    let col = libm::floor((t - (cell * CELL_W) as f64 * s) / s) as usize;
                    let row = (libm::floor((v + half) / s) as usize).min(GLYPH_H - 1);
                    if cell < digits.len() && ink(digits[cell], col, row) {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let v = image.at_mut(x, y, 0);
                *v = v.max(hits as f64 / (SUB * SUB) as f64);
            }
        }
    }
}

/// Renders a scene. Instances that cannot be placed without overlapping a
/// previous one (or the border margin) are dropped and counted.
pub fn synth_scene(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = Grid::new(cfg.width, cfg.height, 1, 0.0f64);
    let mut annotations = Vec::new();
    let mut boxes: Vec<(Point2, Point2)> = Vec::new();
    let mut dropped = 0;
    for _ in 0..cfg.n_instances {
        let n_chars = rng.random_range(cfg.chars.0..=cfg.chars.1);
        let digits: Vec<u8> = (0..n_chars).map(|_| rng.random_range(0..10u8)).collect();
        let mut placed = None;
        for _ in 0..cfg.placement_attempts.max(1) {
            let mut ribbon = make_ribbon(&mut rng, cfg, n_chars);
            let (lo, hi) = bbox(&ribbon.polygon());
            let m = cfg.margin;
            let (free_x, free_y) = (cfg.width as f64 - 1.0 - 2.0 * m - (hi.x - lo.x), cfg.height as f64 - 1.0 - 2.0 * m - (hi.y - lo.y));
            if free_x < 0.0 || free_y < 0.0 {
                continue;
            }
            let shift = Point2::new(
                m - lo.x + rng.random_range(0.0..=free_x),
                m - lo.y + rng.random_range(0.0..=free_y),
            );
            let (blo, bhi) = (lo + shift, hi + shift);
            let clash = boxes
                .iter()
                .any(|(a, b)| blo.x < b.x + m && a.x < bhi.x + m && blo.y < b.y + m && a.y < bhi.y + m);
            if clash {
                continue;
            }
            ribbon.translate(shift);
            boxes.push((blo, bhi));
            placed = Some(ribbon);
            break;
        }
        let Some(ribbon) = placed else {
            dropped += 1;
            continue;
        };
        render(&mut image, &ribbon, &digits, cfg.glyph_size);
        let text: String = digits.iter().map(|d| (b'0' + d) as char).collect();
        let poly = PolygonAnnotation::new(ribbon.polygon())?
            .with_corners(RIBBON_CORNERS)?
            .with_transcription(text);
        annotations.push(poly);
    }
    Ok(SyntheticScene { image, annotations, rng_seed: seed, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::polygon_iou;

    #[test]
    fn deterministic() {
        let cfg = SceneConfig { shape: ShapeMix::Curved, ..Default::default() };
        assert_eq!(synth_scene(7, &cfg).unwrap(), synth_scene(7, &cfg).unwrap());
        assert_ne!(synth_scene(7, &cfg).unwrap().image, synth_scene(8, &cfg).unwrap().image);
    }

    #[test]
    fn straight_ribbon_is_axis_aligned_and_tight() {
        let cfg = SceneConfig { n_instances: 1, max_rotation_deg: 0.0, ..SceneConfig::straight() };
        let scene = synth_scene(1, &cfg).unwrap();
        assert_eq!(scene.annotations.len(), 1);
        let poly = &scene.annotations[0].points;
        let top_y = poly[0].y;
        let bottom_y = poly[SIDE_POINTS].y;
        for p in &poly[..SIDE_POINTS] {
            assert!((p.y - top_y).abs() < 1e-9);
        }
        for p in &poly[SIDE_POINTS..] {
            assert!((p.y - bottom_y).abs() < 1e-9);
        }
        // every inked pixel lies inside the ribbon (anti-aliased edge pixels within half a pixel)
        let (lo, hi) = bbox(poly);
        for y in 0..scene.height() {
            for x in 0..scene.width() {
                if *scene.image.at(x, y, 0) > 0.0 {
                    let (px, py) = (x as f64, y as f64);
                    assert!(px >= lo.x - 0.5 && px <= hi.x + 0.5 && py >= lo.y - 0.5 && py <= hi.y + 0.5);
                }
            }
        }
        // strip covered by the glyph boxes: every cell but the trailing blank column
        let s = cfg.glyph_size as f64;
        let strip = [lo, Point2::new(hi.x - s, lo.y), Point2::new(hi.x - s, hi.y), Point2::new(lo.x, hi.y)];
        let iou = polygon_iou(poly, &strip);
        assert!(iou > 0.95, "{iou}");
    }

    #[test]
    fn polygons_are_valid_fourteen_point_ribbons() {
        let cfg = SceneConfig { shape: ShapeMix::Curved, n_instances: 3, ..Default::default() };
        for seed in 0..20 {
            let scene = synth_scene(seed, &cfg).unwrap();
            assert_eq!(scene.annotations.len() + scene.dropped, 3);
            for (i, a) in scene.annotations.iter().enumerate() {
                assert_eq!(a.points.len(), 2 * SIDE_POINTS);
                assert_eq!(a.corners, Some(RIBBON_CORNERS));
                assert!(a.area() > 0.0);
                assert!(a.validate().is_ok());
                assert!((5..=7).contains(&scene.digits(i).len()));
            }
        }
    }

    #[test]
    fn straight_chains_are_lines() {
        let cfg = SceneConfig { n_instances: 1, ..SceneConfig::straight() };
        let scene = synth_scene(3, &cfg).unwrap();
        let p = &scene.annotations[0].points;
        for side in [&p[..SIDE_POINTS], &p[SIDE_POINTS..]] {
            let (a, b) = (side[0], side[SIDE_POINTS - 1]);
            for q in side {
                assert!((*q - a).cross(b - a).abs() / a.dist(b) < 1e-6);
            }
        }
    }

    #[test]
    fn ribbon_coordinates_invert() {
        let r = Ribbon::from_tangent(100.0, 20.0, |t| 0.3 + 0.6 * (t / 100.0 - 0.5));
        for (t, v) in [(10.0, -5.0), (50.0, 8.0), (90.0, 0.0)] {
            let (t2, v2) = r.locate(r.point(t, v));
            assert!((t2 - t).abs() < 0.05 && (v2 - v).abs() < 0.05, "{t2} {v2}");
        }
    }
}
