//! Shape transform: thin-plate-spline rectification of a text region onto a
//! fixed `W × H` grid, with exact gradients with respect to the input
//! pixels and the source fiducial points.
//!
//! The spline maps destination coordinates to source coordinates (inverse
//! warp), so every output pixel samples the input once. For fixed
//! destination controls the sampled source location is linear in the source
//! fiducials: `s(q) = Σ_i β_i(q) P_i`, which makes the fiducial gradient a
//! weighted sum of bilinear-sampling gradients.
//!
//! Pixel `(x, y)` of any grid sits at coordinate `(x, y)`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::fiducial::FiducialSet;
use crate::geom::Point2;
use crate::{Error, Grid, Result};

/// Real-valued `H × W × C` region.
pub type RegionGrid = Grid<f64>;

/// Target grid and where the fiducials land in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DestLayout {
    pub width: usize,
    pub height: usize,
    pub delta_w: f64,
    pub delta_h: f64,
    /// Fiducial points per side.
    pub n: usize,
}

impl DestLayout {
    /// Margins of 10% of each dimension.
    pub fn new(width: usize, height: usize, n: usize) -> Self {
        Self { width, height, delta_w: 0.1 * width as f64, delta_h: 0.1 * height as f64, n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig("at least 2 fiducial points per side are required"));
        }
        if !(self.width as f64 > 2.0 * self.delta_w && self.height as f64 > 2.0 * self.delta_h)
            || self.delta_w < 0.0
            || self.delta_h < 0.0
        {
            return Err(Error::InvalidConfig("margins must leave a positive interior"));
        }
        Ok(())
    }
}

/// Canonical destinations: top row left→right at `y = Δh`, bottom row
/// right→left at `y = H − Δh`, both spanning `[Δw, W − Δw]`.
pub fn dest_points(layout: &DestLayout) -> Result<Vec<Point2>> {
    layout.validate()?;
    let n = layout.n;
    let step = (layout.width as f64 - 2.0 * layout.delta_w) / (n - 1) as f64;
    let mut pts = Vec::with_capacity(2 * n);
    for i in 0..n {
        pts.push(Point2::new(i as f64 * step + layout.delta_w, layout.delta_h));
    }
    for i in (0..n).rev() {
        pts.push(Point2::new(i as f64 * step + layout.delta_w, layout.height as f64 - layout.delta_h));
    }
    Ok(pts)
}

/// `U(r) = r² log r²`, `U(0) = 0`, taking `r²`.
#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 { 0.0 } else { r2 * libm::log(r2) }
}

/// Fitted destination→source thin-plate spline.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    /// Destination-space controls.
    pub control_points: Vec<Point2>,
    /// `source = affine · [1, x, y]ᵀ + kernel part`, rows for source x and y,
    /// in original (unnormalized) coordinates.
    pub affine: [[f64; 3]; 2],
    /// Weights of `U(|q̂ − ĉ_i|)` where `q̂` are normalized coordinates
    /// (see [`TpsTransform::normalize`]).
    pub kernel_weights: Vec<[f64; 2]>,
    pub regularization: f64,
    origin: Point2,
    scale: f64,
    normalized_controls: Vec<Point2>,
    normalized_affine: [[f64; 3]; 2],
    /// Columns `0..2N` of the inverse system matrix, row-major `(2N+3) × 2N`.
    solve_columns: Vec<f64>,
}

impl TpsTransform {
    pub fn len(&self) -> usize {
        self.control_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control_points.is_empty()
    }

    /// Similarity normalization applied to destination coordinates before
    /// evaluating the kernel: `(q − origin) / scale`.
    pub fn normalize(&self, q: Point2) -> Point2 {
        (q - self.origin) * (1.0 / self.scale)
    }

    fn basis(&self, q: Point2, out: &mut [f64]) {
        let qn = self.normalize(q);
        let m = self.normalized_controls.len();
        for (j, c) in self.normalized_controls.iter().enumerate() {
            let d = qn - *c;
            out[j] = tps_kernel(d.dot(d));
        }
        out[m] = 1.0;
        out[m + 1] = qn.x;
        out[m + 2] = qn.y;
    }

    /// Source location for destination coordinate `q`.
    pub fn eval(&self, q: Point2) -> Point2 {
        let qn = self.normalize(q);
        let a = &self.normalized_affine;
        let mut sx = a[0][0] + a[0][1] * qn.x + a[0][2] * qn.y;
        let mut sy = a[1][0] + a[1][1] * qn.x + a[1][2] * qn.y;
        for (c, w) in self.normalized_controls.iter().zip(&self.kernel_weights) {
            let d = qn - *c;
            let u = tps_kernel(d.dot(d));
            sx += w[0] * u;
            sy += w[1] * u;
        }
        Point2::new(sx, sy)
    }

    /// `β_i(q)`: sensitivity of `eval(q)` to source control `i` (identical
    /// for both coordinates).
    pub fn source_weights(&self, q: Point2) -> Vec<f64> {
        let m = self.normalized_controls.len();
        let mut b = vec![0.0; m + 3];
        self.basis(q, &mut b);
        (0..m).map(|i| (0..m + 3).map(|r| b[r] * self.solve_columns[r * m + i]).sum()).collect()
    }
}

/// Fits the spline through `(dst_i → src_i)` with ridge `lambda` on the
/// kernel block.
pub fn tps_fit(src: &[Point2], dst: &[Point2], lambda: f64) -> Result<TpsTransform> {
    let m = dst.len();
    if src.len() != m {
        return Err(Error::ShapeMismatch(alloc::format!("{} source vs {} destination points", src.len(), m)));
    }
    if m < 3 || !src.iter().chain(dst).all(|p| p.is_finite()) || !(lambda >= 0.0) {
        return Err(Error::DegenerateFiducials);
    }
    let (mut lo, mut hi) = (dst[0], dst[0]);
    for p in dst {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let scale = (hi.x - lo.x).max(hi.y - lo.y);
    if !(scale > 0.0) {
        return Err(Error::DegenerateFiducials);
    }
    let origin = lo;
    let norm: Vec<Point2> = dst.iter().map(|&p| (p - origin) * (1.0 / scale)).collect();

    // reject coincident and collinear controls up front
    for i in 0..m {
        for j in i + 1..m {
            if norm[i].dist(norm[j]) < 1e-9 {
                return Err(Error::DegenerateFiducials);
            }
        }
    }
    let mean = norm.iter().fold(Point2::default(), |a, &p| a + p) * (1.0 / m as f64);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &norm {
        let d = *p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    if sxx * syy - sxy * sxy <= 1e-12 * (sxx + syy) * (sxx + syy) {
        return Err(Error::DegenerateFiducials);
    }

    let size = m + 3;
    let mut l = DMatrix::<f64>::zeros(size, size);
    for i in 0..m {
        for j in 0..m {
            let d = norm[i] - norm[j];
            l[(i, j)] = tps_kernel(d.dot(d));
        }
        l[(i, i)] += lambda;
        let row = [1.0, norm[i].x, norm[i].y];
        for (k, v) in row.into_iter().enumerate() {
            l[(i, m + k)] = v;
            l[(m + k, i)] = v;
        }
    }
    let inv = l.clone().lu().try_inverse().ok_or(Error::DegenerateFiducials)?;
    let check = &l * &inv;
    for r in 0..size {
        for c in 0..size {
            let want = if r == c { 1.0 } else { 0.0 };
            if !(libm::fabs(check[(r, c)] - want) < 1e-6) {
                return Err(Error::DegenerateFiducials);
            }
        }
    }

    let mut solve_columns = vec![0.0; size * m];
    for r in 0..size {
        for i in 0..m {
            solve_columns[r * m + i] = inv[(r, i)];
        }
    }
    let mut coef = vec![[0.0f64; 2]; size];
    for (r, c) in coef.iter_mut().enumerate() {
        for (i, s) in src.iter().enumerate() {
            let w = solve_columns[r * m + i];
            c[0] += w * s.x;
            c[1] += w * s.y;
        }
    }
    let kernel_weights = coef[..m].to_vec();
    let na = [
        [coef[m][0], coef[m + 1][0], coef[m + 2][0]],
        [coef[m][1], coef[m + 1][1], coef[m + 2][1]],
    ];
    let inv_s = 1.0 / scale;
    let affine = [0, 1].map(|d| {
        let (b0, bx, by) = (na[d][0], na[d][1], na[d][2]);
        [b0 - (bx * origin.x + by * origin.y) * inv_s, bx * inv_s, by * inv_s]
    });
    Ok(TpsTransform {
        control_points: dst.to_vec(),
        affine,
        kernel_weights,
        regularization: lambda,
        origin,
        scale,
        normalized_controls: norm,
        normalized_affine: na,
        solve_columns,
    })
}

/// Fits the spline from generated fiducials to the layout's destinations.
pub fn fit_to_layout(src: &FiducialSet, layout: &DestLayout, lambda: f64) -> Result<TpsTransform> {
    if src.n != layout.n {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} fiducials per side, layout expects {}",
            src.n,
            layout.n
        )));
    }
    tps_fit(&src.points, &dest_points(layout)?, lambda)
}

/// Bilinear neighbours of a source location: `(x0, y0, fx, fy)`.
#[inline]
fn cell(s: Point2) -> (isize, isize, f64, f64) {
    let fx = libm::floor(s.x);
    let fy = libm::floor(s.y);
    (fx as isize, fy as isize, s.x - fx, s.y - fy)
}

#[inline]
fn fetch(region: &RegionGrid, x: isize, y: isize, c: usize) -> f64 {
    if x < 0 || y < 0 || x as usize >= region.width || y as usize >= region.height {
        0.0
    } else {
        *region.at(x as usize, y as usize, c)
    }
}

/// Bilinear sample with zero padding outside the grid.
pub fn bilinear(region: &RegionGrid, s: Point2, c: usize) -> f64 {
    if !s.is_finite() {
        return 0.0;
    }
    let (x0, y0, fx, fy) = cell(s);
    (1.0 - fy) * ((1.0 - fx) * fetch(region, x0, y0, c) + fx * fetch(region, x0 + 1, y0, c))
        + fy * ((1.0 - fx) * fetch(region, x0, y0 + 1, c) + fx * fetch(region, x0 + 1, y0 + 1, c))
}

/// Source coordinate sampled by every output pixel, row-major.
pub fn sample_coords(t: &TpsTransform, layout: &DestLayout) -> Vec<Point2> {
    let mut out = Vec::with_capacity(layout.width * layout.height);
    for v in 0..layout.height {
        for u in 0..layout.width {
            out.push(t.eval(Point2::new(u as f64, v as f64)));
        }
    }
    out
}

/// Rectifies `region` onto the layout's `H × W` grid.
pub fn warp(region: &RegionGrid, t: &TpsTransform, layout: &DestLayout) -> Result<RegionGrid> {
    if region.is_empty() {
        return Err(Error::ShapeMismatch("empty source region".into()));
    }
    let ch = region.channels;
    let mut out = Grid::new(layout.width, layout.height, ch, 0.0);
    for (i, s) in sample_coords(t, layout).into_iter().enumerate() {
        for c in 0..ch {
            out.data[i * ch + c] = bilinear(region, s, c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpGradients {
    /// Gradient with respect to the source region.
    pub d_input: RegionGrid,
    /// Gradient with respect to each source fiducial point.
    pub d_fiducials: Vec<Point2>,
}

/// Adjoint of [`warp`] for an upstream gradient on the rectified grid.
pub fn warp_backward(
    d_output: &RegionGrid,
    region: &RegionGrid,
    t: &TpsTransform,
    layout: &DestLayout,
) -> Result<WarpGradients> {
    if d_output.width != layout.width || d_output.height != layout.height || d_output.channels != region.channels {
        return Err(Error::ShapeMismatch(alloc::format!(
            "output gradient is {}x{}x{}, expected {}x{}x{}",
            d_output.height,
            d_output.width,
            d_output.channels,
            layout.height,
            layout.width,
            region.channels
        )));
    }
    let m = t.len();
    let ch = region.channels;
    let mut d_input = Grid::new(region.width, region.height, ch, 0.0);
    // Σ_q basis(q) ⊗ ∂L/∂s(q)
    let mut acc = vec![[0.0f64; 2]; m + 3];
    let mut b = vec![0.0; m + 3];
    for v in 0..layout.height {
        for u in 0..layout.width {
            let q = Point2::new(u as f64, v as f64);
            let s = t.eval(q);
            if !s.is_finite() {
                continue;
            }
            let (x0, y0, fx, fy) = cell(s);
            let (mut gx, mut gy) = (0.0, 0.0);
            for c in 0..ch {
                let g = *d_output.at(u, v, c);
                if g == 0.0 {
                    continue;
                }
                let v00 = fetch(region, x0, y0, c);
                let v10 = fetch(region, x0 + 1, y0, c);
                let v01 = fetch(region, x0, y0 + 1, c);
                let v11 = fetch(region, x0 + 1, y0 + 1, c);
                gx += g * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
                gy += g * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
                for (dx, dy, w) in [
                    (0, 0, (1.0 - fx) * (1.0 - fy)),
                    (1, 0, fx * (1.0 - fy)),
                    (0, 1, (1.0 - fx) * fy),
                    (1, 1, fx * fy),
                ] {
                    let (x, y) = (x0 + dx, y0 + dy);
                    if x >= 0 && y >= 0 && (x as usize) < region.width && (y as usize) < region.height {
                        *d_input.at_mut(x as usize, y as usize, c) += g * w;
                    }
                }
            }
            if gx != 0.0 || gy != 0.0 {
                t.basis(q, &mut b);
                for (a, br) in acc.iter_mut().zip(&b) {
                    a[0] += br * gx;
                    a[1] += br * gy;
                }
            }
        }
    }
    let d_fiducials = (0..m)
        .map(|i| {
            let (mut x, mut y) = (0.0, 0.0);
            for (r, a) in acc.iter().enumerate() {
                let w = t.solve_columns[r * m + i];
                x += w * a[0];
                y += w * a[1];
            }
            Point2::new(x, y)
        })
        .collect();
    Ok(WarpGradients { d_input, d_fiducials })
}

/// Directional derivative of [`warp`] when the source fiducials move by
/// `d_src` (destination controls fixed); [`warp_backward`]'s fiducial
/// gradient is its adjoint. Samples exactly on a cell edge use the
/// derivative of the cell they fall in.
pub fn warp_tangent(region: &RegionGrid, t: &TpsTransform, layout: &DestLayout, d_src: &[Point2]) -> Result<RegionGrid> {
    let m = t.len();
    if d_src.len() != m {
        return Err(Error::ShapeMismatch(alloc::format!("{} tangent points for {} controls", d_src.len(), m)));
    }
    let ch = region.channels;
    let mut out = Grid::new(layout.width, layout.height, ch, 0.0);
    for v in 0..layout.height {
        for u in 0..layout.width {
            let q = Point2::new(u as f64, v as f64);
            let s = t.eval(q);
            if !s.is_finite() {
                continue;
            }
            let ds = t.source_weights(q).iter().zip(d_src).fold(Point2::default(), |a, (b, d)| a + *d * *b);
            let (x0, y0, fx, fy) = cell(s);
            for c in 0..ch {
                let v00 = fetch(region, x0, y0, c);
                let v10 = fetch(region, x0 + 1, y0, c);
                let v01 = fetch(region, x0, y0 + 1, c);
                let v11 = fetch(region, x0 + 1, y0 + 1, c);
                let gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
                let gy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
                *out.at_mut(u, v, c) = gx * ds.x + gy * ds.y;
            }
        }
    }
    Ok(out)
}

/// Fit + warp in one call.
pub fn rectify(region: &RegionGrid, src: &FiducialSet, layout: &DestLayout, lambda: f64) -> Result<(RegionGrid, TpsTransform)> {
    let t = fit_to_layout(src, layout, lambda)?;
    Ok((warp(region, &t, layout)?, t))
}

pub const DEFAULT_LAMBDA: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_region(rng: &mut ChaCha8Rng, w: usize, h: usize, ch: usize) -> RegionGrid {
        let mut g = Grid::new(w, h, ch, 0.0);
        for v in g.data.iter_mut() {
            *v = rng.random::<f64>();
        }
        g
    }

    #[test]
    fn destination_layout_values() {
        let layout = DestLayout { width: 100, height: 32, delta_w: 10.0, delta_h: 3.2, n: 3 };
        let pts = dest_points(&layout).unwrap();
        let want = [(10.0, 3.2), (50.0, 3.2), (90.0, 3.2), (90.0, 28.8), (50.0, 28.8), (10.0, 28.8)];
        for (p, w) in pts.iter().zip(want) {
            assert!((p.x - w.0).abs() < 1e-12 && (p.y - w.1).abs() < 1e-12, "{p:?}");
        }
        assert_eq!(DestLayout::new(100, 32, 3), layout);
        let corners = dest_points(&DestLayout { n: 2, ..layout }).unwrap();
        assert_eq!(corners.len(), 4);
        let border = dest_points(&DestLayout { delta_w: 0.0, delta_h: 0.0, ..layout }).unwrap();
        assert_eq!(border[0], Point2::new(0.0, 0.0));
        assert_eq!(border[2], Point2::new(100.0, 0.0));
        assert_eq!(border[3], Point2::new(100.0, 32.0));
        assert!(dest_points(&DestLayout { n: 1, ..layout }).is_err());
    }

    #[test]
    fn identity_fit() {
        let dst = dest_points(&DestLayout::new(64, 16, 4)).unwrap();
        let t = tps_fit(&dst, &dst, 0.0).unwrap();
        assert!(t.kernel_weights.iter().all(|w| w[0].abs() < 1e-8 && w[1].abs() < 1e-8));
        let a = t.affine;
        for (got, want) in a.iter().flatten().zip([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_fit() {
        let dst = dest_points(&DestLayout::new(64, 16, 5)).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| *p + Point2::new(5.0, -2.0)).collect();
        let t = tps_fit(&src, &dst, 0.0).unwrap();
        assert!((t.affine[0][0] - 5.0).abs() < 1e-9 && (t.affine[1][0] + 2.0).abs() < 1e-9);
        assert!(t.kernel_weights.iter().all(|w| w[0].abs() < 1e-8 && w[1].abs() < 1e-8));
    }

    #[test]
    fn interpolates_random_controls() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dst = dest_points(&DestLayout::new(100, 32, 4)).unwrap();
        let src: Vec<Point2> = dst
            .iter()
            .map(|p| Point2::new(p.x * 1.3 + rng.random_range(-5.0..5.0), p.y + rng.random_range(-5.0..5.0)))
            .collect();
        let t = tps_fit(&src, &dst, 0.0).unwrap();
        for (d, s) in dst.iter().zip(&src) {
            assert!(t.eval(*d).dist(*s) < 1e-9);
        }
        // side conditions
        let (mut s0, mut sx, mut sy) = ([0.0; 2], [0.0; 2], [0.0; 2]);
        for (w, c) in t.kernel_weights.iter().zip(&dst) {
            for k in 0..2 {
                s0[k] += w[k];
                sx[k] += w[k] * c.x;
                sy[k] += w[k] * c.y;
            }
        }
        for k in 0..2 {
            assert!(s0[k].abs() < 1e-8 && sx[k].abs() < 1e-6 && sy[k].abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_controls_rejected() {
        let line: Vec<Point2> = (0..6).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert_eq!(tps_fit(&line, &line, 0.0).unwrap_err(), Error::DegenerateFiducials);
        let mut dup = dest_points(&DestLayout::new(40, 10, 3)).unwrap();
        dup[1] = dup[0];
        assert_eq!(tps_fit(&dup, &dup, 0.0).unwrap_err(), Error::DegenerateFiducials);
    }

    #[test]
    fn identity_warp_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layout = DestLayout::new(40, 12, 4);
        let dst = dest_points(&layout).unwrap();
        let t = tps_fit(&dst, &dst, 0.0).unwrap();
        let region = random_region(&mut rng, 40, 12, 2);
        let out = warp(&region, &t, &layout).unwrap();
        for (a, b) in out.data.iter().zip(&region.data) {
            assert!((a - b).abs() < 1e-9);
        }
        let g = warp_backward(&out, &region, &t, &layout).unwrap();
        for (a, b) in g.d_input.data.iter().zip(&out.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_region_gives_constant_output_and_no_point_gradient() {
        let layout = DestLayout::new(30, 10, 3);
        let dst = dest_points(&layout).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| Point2::new(p.x * 0.8 + 4.0, p.y * 0.9 + 3.0 + 0.02 * p.x)).collect();
        let t = tps_fit(&src, &dst, 0.0).unwrap();
        let region = Grid::new(60, 30, 1, 0.7);
        let out = warp(&region, &t, &layout).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let g = warp_backward(&Grid::new(30, 10, 1, 1.0), &region, &t, &layout).unwrap();
        assert!(g.d_fiducials.iter().all(|p| p.norm() < 1e-9));
    }

    #[test]
    fn scaling_matches_bilinear_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layout = DestLayout::new(20, 8, 3);
        let dst = dest_points(&layout).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| *p * 2.0).collect();
        let t = tps_fit(&src, &dst, 0.0).unwrap();
        let region = random_region(&mut rng, 45, 20, 1);
        let out = warp(&region, &t, &layout).unwrap();
        // independent oracle: explicit 4-tap interpolation at (2u, 2v) which hits pixels exactly
        for v in 0..8 {
            for u in 0..20 {
                let (sx, sy) = (2 * u, 2 * v);
                let want = if sx < 45 && sy < 20 { *region.at(sx, sy, 0) } else { 0.0 };
                assert!((out.at(u, v, 0) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn warp_is_linear_in_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = DestLayout::new(24, 8, 4);
        let dst = dest_points(&layout).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| *p + Point2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let t = tps_fit(&src, &dst, DEFAULT_LAMBDA).unwrap();
        let r1 = random_region(&mut rng, 30, 12, 1);
        let r2 = random_region(&mut rng, 30, 12, 1);
        let (a, b) = (0.3, -1.7);
        let mut mix = r1.clone();
        for (m, v) in mix.data.iter_mut().zip(&r2.data) {
            *m = a * *m + b * v;
        }
        let lhs = warp(&mix, &t, &layout).unwrap();
        let (w1, w2) = (warp(&r1, &t, &layout).unwrap(), warp(&r2, &t, &layout).unwrap());
        for i in 0..lhs.data.len() {
            assert!((lhs.data[i] - (a * w1.data[i] + b * w2.data[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_shape_mismatch() {
        let layout = DestLayout::new(24, 8, 3);
        let dst = dest_points(&layout).unwrap();
        let t = tps_fit(&dst, &dst, 0.0).unwrap();
        let region = Grid::new(24, 8, 1, 0.0);
        assert!(warp_backward(&Grid::new(23, 8, 1, 0.0), &region, &t, &layout).is_err());
    }

    #[test]
    fn source_weights_reproduce_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dst = dest_points(&DestLayout::new(50, 16, 5)).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| *p + Point2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
        let t = tps_fit(&src, &dst, 1e-3).unwrap();
        let q = Point2::new(17.3, 9.1);
        let beta = t.source_weights(q);
        let s = beta.iter().zip(&src).fold(Point2::default(), |acc, (b, p)| acc + *p * *b);
        assert!(s.dist(t.eval(q)) < 1e-9);
        assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fiducial_gradient_is_adjoint_of_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layout = DestLayout::new(40, 12, 5);
        let dst = dest_points(&layout).unwrap();
        let src: Vec<Point2> = dst.iter().map(|p| Point2::new(p.x * 1.1 + 2.0 + rng.random_range(-2.0..2.0), p.y + 3.0 + rng.random_range(-2.0..2.0))).collect();
        let t = tps_fit(&src, &dst, DEFAULT_LAMBDA).unwrap();
        let region = random_region(&mut rng, 50, 20, 2);
        let g = random_region(&mut rng, 40, 12, 2);
        let dp: Vec<Point2> = (0..10).map(|_| Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let tan = warp_tangent(&region, &t, &layout, &dp).unwrap();
        let lhs: f64 = tan.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let back = warp_backward(&g, &region, &t, &layout).unwrap();
        let rhs: f64 = back.d_fiducials.iter().zip(&dp).map(|(a, b)| a.dot(*b)).sum();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        // input adjoint: <warp(v), g> = <v, d_input>
        let v = random_region(&mut rng, 50, 20, 2);
        let lhs: f64 = warp(&v, &t, &layout).unwrap().data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = back.d_input.data.iter().zip(&v.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
