//! Training-side losses and the soft loss-weight schedule.

use crate::label::{GeometryMaps, BOUNDARY_MASK_BASE};
use crate::{Error, Grid, Result};

pub const DICE_EPS: f64 = 1e-6;
pub const DEFAULT_SIGMA: f64 = 3.0;

/// `1 − 2Σ(p·t·m) / (Σp²m + Σt²m + ε)` over channel `c` of each grid.
pub fn dice_loss_channel(pred: &Grid<f32>, target: &Grid<f32>, mask: &Grid<f32>, c: usize) -> Result<f64> {
    if pred.width != target.width
        || pred.height != target.height
        || pred.width != mask.width
        || pred.height != mask.height
        || c >= pred.channels
        || c >= target.channels
    {
        return Err(Error::ShapeMismatch("dice inputs differ in shape".into()));
    }
    let (mut inter, mut pp, mut tt) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..pred.height {
        for x in 0..pred.width {
            let m = *mask.at(x, y, 0) as f64;
            let p = *pred.at(x, y, c) as f64;
            let t = *target.at(x, y, c) as f64;
            inter += p * t * m;
            pp += p * p * m;
            tt += t * t * m;
        }
    }
    Ok(1.0 - 2.0 * inter / (pp + tt + DICE_EPS))
}

/// Single-channel Dice loss.
pub fn dice_loss(pred: &Grid<f32>, target: &Grid<f32>, mask: &Grid<f32>) -> Result<f64> {
    if pred.channels != 1 || target.channels != 1 {
        return Err(Error::ShapeMismatch("dice_loss expects single-channel maps".into()));
    }
    dice_loss_channel(pred, target, mask, 0)
}

/// How per-class Dice losses combine into the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassReduction {
    #[default]
    Mean,
    Sum,
}

/// Classification loss over the four foreground channels (1..5) of
/// `H × W × 5` class maps.
pub fn classification_loss(
    pred: &Grid<f32>,
    target: &Grid<f32>,
    mask: &Grid<f32>,
    reduction: ClassReduction,
) -> Result<f64> {
    if pred.channels != 5 || target.channels != 5 {
        return Err(Error::ShapeMismatch("class maps must have 5 channels".into()));
    }
    let mut total = 0.0;
    for c in 1..5 {
        total += dice_loss_channel(pred, target, mask, c)?;
    }
    Ok(match reduction {
        ClassReduction::Mean => total / 4.0,
        ClassReduction::Sum => total,
    })
}

/// `0.5(σz)²` if `|z| < 1/σ²`, else `|z| − 0.5/σ²`.
pub fn smooth_l1(z: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let a = libm::fabs(z);
    if a < 1.0 / s2 { 0.5 * s2 * z * z } else { a - 0.5 / s2 }
}

/// Derivative of [`smooth_l1`] in `z`.
pub fn smooth_l1_grad(z: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    if libm::fabs(z) < 1.0 / s2 {
        s2 * z
    } else if z > 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionLosses {
    pub corner: f64,
    pub boundary: f64,
    /// Set when no entry of the corresponding mask is nonzero.
    pub corner_unsupervised: bool,
    pub boundary_unsupervised: bool,
}

impl RegressionLosses {
    pub fn no_supervision(&self) -> bool {
        self.corner_unsupervised && self.boundary_unsupervised
    }
}

fn check_geo(pred: &GeometryMaps, gt: &GeometryMaps) -> Result<()> {
    if !pred.corner_offsets.same_shape(&gt.corner_offsets) || !pred.boundary_offsets.same_shape(&gt.boundary_offsets) {
        return Err(Error::ShapeMismatch("predicted and target geometry maps differ in shape".into()));
    }
    Ok(())
}

/// Masked Smooth-L1 regression on corner and boundary channels, weighted by
/// the target's valid mask and averaged over supervised (nonzero-mask)
/// entries.
pub fn regression_losses(pred: &GeometryMaps, gt: &GeometryMaps, sigma: f64) -> Result<RegressionLosses> {
    regression_losses_with_grad(pred, gt, sigma).map(|(l, _)| l)
}

/// As [`regression_losses`], also returning `∂(L_corner)/∂pred` and
/// `∂(L_boundary)/∂pred` packed as a `H × W × 12` stacked gradient.
pub fn regression_losses_with_grad(
    pred: &GeometryMaps,
    gt: &GeometryMaps,
    sigma: f64,
) -> Result<(RegressionLosses, Grid<f64>)> {
    check_geo(pred, gt)?;
    let (w, h) = (gt.width(), gt.height());
    let mut grad = Grid::new(w, h, 12, 0.0f64);
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for y in 0..h {
        for x in 0..w {
            for c in 0..12 {
                let m = *gt.valid_mask.at(x, y, c) as f64;
                if m == 0.0 {
                    continue;
                }
                let z = pred.stacked(x, y, c) as f64 - gt.stacked(x, y, c) as f64;
                let k = usize::from(c >= BOUNDARY_MASK_BASE);
                sums[k] += m * smooth_l1(z, sigma);
                counts[k] += 1;
                *grad.at_mut(x, y, c) = m * smooth_l1_grad(z, sigma);
            }
        }
    }
    for (i, g) in grad.data.iter_mut().enumerate() {
        let k = usize::from(i % 12 >= BOUNDARY_MASK_BASE);
        if counts[k] > 0 {
            *g /= counts[k] as f64;
        }
    }
    let avg = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    Ok((
        RegressionLosses {
            corner: avg(0),
            boundary: avg(1),
            corner_unsupervised: counts[0] == 0,
            boundary_unsupervised: counts[1] == 0,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Corner regression weight.
    pub lambda_b: f64,
    /// Boundary regression weight.
    pub lambda_c: f64,
    /// Recognition weight.
    pub lambda_r: f64,
}

/// How the regression weights decay with the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegressionDecay {
    /// `λ* − min(0.02E, 0.5)`: starts at `λ*` and floors at `λ* − 0.5`.
    #[default]
    Decaying,
    /// `λ* − max(0.02E, 0.5)` as literally written, clamped at zero.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub lambda_star: f64,
    pub lambda_r_star: f64,
    pub decay: RegressionDecay,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { lambda_star: 0.6, lambda_r_star: 0.8, decay: RegressionDecay::Decaying }
    }
}

/// Soft loss weights for epoch `epoch`: recognition ramps in while the
/// regression terms fade.
pub fn loss_schedule(epoch: u32, cfg: &ScheduleConfig) -> LossWeights {
    let e = 0.02 * epoch as f64;
    let lambda_r = (-0.1 + e).max(0.0).min(cfg.lambda_r_star);
    let lambda_b = match cfg.decay {
        RegressionDecay::Decaying => cfg.lambda_star - e.min(0.5),
        RegressionDecay::Literal => (cfg.lambda_star - e.max(0.5)).max(0.0),
    };
    LossWeights { lambda_b, lambda_c: lambda_b, lambda_r }
}

/// `L = l_cls + λ_b·l_corner + λ_c·l_boundary + λ_r·l_recog`.
pub fn total_loss(l_cls: f64, l_corner: f64, l_boundary: f64, l_recog: f64, w: &LossWeights) -> Result<f64> {
    if ![l_cls, l_corner, l_boundary, l_recog].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(l_cls + w.lambda_b * l_corner + w.lambda_c * l_boundary + w.lambda_r * l_recog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, v: &[f32]) -> Grid<f32> {
        Grid::from_vec(w, h, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn smooth_l1_values() {
        assert_eq!(smooth_l1(0.0, 3.0), 0.0);
        assert!((smooth_l1(0.1, 3.0) - 0.045).abs() < 1e-12);
        assert!((smooth_l1(1.0, 3.0) - (1.0 - 0.5 / 9.0)).abs() < 1e-12);
        assert_eq!(smooth_l1(-1.0, 3.0), smooth_l1(1.0, 3.0));
    }

    #[test]
    fn smooth_l1_is_c1_at_knee() {
        for sigma in [1.0, 3.0, 5.5] {
            let k = 1.0 / (sigma * sigma);
            for s in [1.0, -1.0] {
                let (lo, hi) = (s * (k - 1e-12), s * (k + 1e-12));
                assert!((smooth_l1(lo, sigma) - smooth_l1(hi, sigma)).abs() < 1e-10);
                assert!((smooth_l1_grad(lo, sigma) - smooth_l1_grad(hi, sigma)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dice_values() {
        let ones = grid(4, 1, &[1.0; 4]);
        let t = grid(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        assert!(dice_loss(&t, &t, &ones).unwrap() < 1e-6);
        let d = grid(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        assert!((dice_loss(&d, &t, &ones).unwrap() - 1.0).abs() < 1e-6);
        let half = grid(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        assert!((dice_loss(&half, &t, &ones).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!(dice_loss(&grid(3, 1, &[0.0; 3]), &t, &ones).is_err());
    }

    #[test]
    fn class_loss_reduction() {
        let mut p = Grid::new(3, 1, 5, 0.0f32);
        let mut t = Grid::new(3, 1, 5, 0.0f32);
        *p.at_mut(0, 0, 1) = 1.0;
        *t.at_mut(0, 0, 1) = 1.0;
        *p.at_mut(1, 0, 2) = 1.0;
        *t.at_mut(2, 0, 2) = 1.0;
        let m = Grid::new(3, 1, 1, 1.0f32);
        let mean = classification_loss(&p, &t, &m, ClassReduction::Mean).unwrap();
        let sum = classification_loss(&p, &t, &m, ClassReduction::Sum).unwrap();
        // class 1 perfect, class 2 disjoint, classes 3/4 empty on both sides (0/ε → loss 1)
        assert!((sum - 3.0).abs() < 1e-6);
        assert!((mean - 0.75).abs() < 1e-6);
    }

    #[test]
    fn schedule_values() {
        let cfg = ScheduleConfig::default();
        assert_eq!(loss_schedule(0, &cfg).lambda_r, 0.0);
        assert!((loss_schedule(10, &cfg).lambda_r - 0.1).abs() < 1e-12);
        assert_eq!(loss_schedule(45, &cfg).lambda_r, 0.8);
        assert_eq!(loss_schedule(500, &cfg).lambda_r, 0.8);
        assert_eq!(loss_schedule(0, &cfg).lambda_b, 0.6);
        for e in [25, 30, 100] {
            let w = loss_schedule(e, &cfg);
            assert!((w.lambda_b - 0.1).abs() < 1e-12 && w.lambda_c == w.lambda_b);
        }
        let lit = ScheduleConfig { decay: RegressionDecay::Literal, ..cfg };
        assert!((loss_schedule(0, &lit).lambda_b - 0.1).abs() < 1e-12);
        assert_eq!(loss_schedule(60, &lit).lambda_b, 0.0);
    }

    #[test]
    fn schedule_monotone() {
        for decay in [RegressionDecay::Decaying, RegressionDecay::Literal] {
            let cfg = ScheduleConfig { decay, ..Default::default() };
            let mut prev = loss_schedule(0, &cfg);
            for e in 1..200 {
                let w = loss_schedule(e, &cfg);
                assert!(w.lambda_r >= prev.lambda_r && w.lambda_b <= prev.lambda_b);
                assert!((0.0..=0.8).contains(&w.lambda_r) && (0.0..=0.6).contains(&w.lambda_b));
                prev = w;
            }
        }
    }

    #[test]
    fn total_loss_values() {
        let w = LossWeights { lambda_b: 0.5, lambda_c: 0.25, lambda_r: 2.0 };
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 0.0, 0.0, 0.0, &w).unwrap(), 1.0);
        assert_eq!(total_loss(0.0, 2.0, 0.0, 0.0, &w).unwrap(), 1.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, f64::NAN, &w).unwrap_err(), Error::NonFiniteLoss);
    }

    fn random_geo(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GeometryMaps {
        let mut g = GeometryMaps::zeros(w, h);
        for v in g.corner_offsets.data.iter_mut().chain(g.boundary_offsets.data.iter_mut()) {
            *v = rng.random_range(-3.0..3.0);
        }
        for v in g.valid_mask.data.iter_mut() {
            *v = [0.0, 0.1, 1.0][rng.random_range(0..3)];
        }
        g
    }

    #[test]
    fn regression_single_entry() {
        let gt = {
            let mut g = GeometryMaps::zeros(3, 2);
            *g.valid_mask.at_mut(1, 1, 5) = 1.0;
            g
        };
        let mut pred = gt.clone();
        let r = regression_losses(&pred, &gt, 3.0).unwrap();
        assert_eq!((r.corner, r.boundary), (0.0, 0.0));
        assert!(r.boundary_unsupervised && !r.corner_unsupervised);
        *pred.corner_offsets.at_mut(1, 1, 5) = 0.1;
        let r = regression_losses(&pred, &gt, 3.0).unwrap();
        assert!((r.corner - 0.045).abs() < 1e-7);
        let empty = GeometryMaps::zeros(3, 2);
        assert!(regression_losses(&pred, &empty, 3.0).unwrap().no_supervision());
    }

    #[test]
    fn regression_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (w, h) = (rng.random_range(1..9), rng.random_range(1..9));
            let gt = random_geo(&mut rng, w, h);
            let pred = random_geo(&mut rng, w, h);
            let r = regression_losses(&pred, &gt, 3.0).unwrap();
            let (mut cs, mut cn, mut bs, mut bn) = (0.0, 0, 0.0, 0);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..8 {
                        let m = *gt.valid_mask.at(x, y, c) as f64;
                        if m != 0.0 {
                            let z = *pred.corner_offsets.at(x, y, c) as f64 - *gt.corner_offsets.at(x, y, c) as f64;
                            cs += m * smooth_l1(z, 3.0);
                            cn += 1;
                        }
                    }
                    for c in 0..4 {
                        let m = *gt.valid_mask.at(x, y, 8 + c) as f64;
                        if m != 0.0 {
                            let z = *pred.boundary_offsets.at(x, y, c) as f64 - *gt.boundary_offsets.at(x, y, c) as f64;
                            bs += m * smooth_l1(z, 3.0);
                            bn += 1;
                        }
                    }
                }
            }
            let want_c = if cn == 0 { 0.0 } else { cs / cn as f64 };
            let want_b = if bn == 0 { 0.0 } else { bs / bn as f64 };
            assert!((r.corner - want_c).abs() < 1e-9 && (r.boundary - want_b).abs() < 1e-9);
        }
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_geo(&mut rng, 3, 3);
        let pred = random_geo(&mut rng, 3, 3);
        let (_, grad) = regression_losses_with_grad(&pred, &gt, 3.0).unwrap();
        let f = |p: &GeometryMaps| {
            let r = regression_losses(p, &gt, 3.0).unwrap();
            r.corner + r.boundary
        };
        let h = 1e-3f32;
        let mut checked = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..12 {
                    let mut a = pred.clone();
                    let mut b = pred.clone();
                    *a.stacked_mut(x, y, c) += h;
                    *b.stacked_mut(x, y, c) -= h;
                    let fd = (f(&a) - f(&b)) / (2.0 * h as f64);
                    checked.push((fd - grad.at(x, y, c)).abs());
                }
            }
        }
        assert!(checked.iter().all(|e| *e < 1e-3), "{checked:?}");
    }

    proptest! {
        #[test]
        fn dice_bounded_and_symmetric(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..40)) {
            let n = bits.len();
            let p: Vec<f32> = bits.iter().map(|b| b.0 as u8 as f32).collect();
            let t: Vec<f32> = bits.iter().map(|b| b.1 as u8 as f32).collect();
            let (p, t, m) = (grid(n, 1, &p), grid(n, 1, &t), Grid::new(n, 1, 1, 1.0f32));
            let a = dice_loss(&p, &t, &m).unwrap();
            let b = dice_loss(&t, &p, &m).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn total_loss_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, k in 0usize..4) {
            let w = LossWeights { lambda_b: 0.3, lambda_c: 0.7, lambda_r: 0.2 };
            let mut x = [1.0, 2.0, 3.0, 4.0];
            let mut y = x;
            x[k] = a;
            y[k] = b;
            let mut z = x;
            z[k] = a + b;
            let f = |v: [f64; 4]| total_loss(v[0], v[1], v[2], v[3], &w).unwrap();
            let zero = { let mut v = x; v[k] = 0.0; f(v) };
            prop_assert!((f(z) - zero - ((f(x) - zero) + (f(y) - zero))).abs() < 1e-9);
        }
    }
}
