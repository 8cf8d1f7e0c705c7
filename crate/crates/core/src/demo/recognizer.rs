//! Toy differentiable recognizer: the rectified grid is cut into vertical
//! strips of `pool` columns, each strip is averaged into a row profile, and
//! a linear map over the profiles of the strip and its `context` neighbours
//! gives per-strip logits over ten digits plus blank.

use alloc::vec;
use alloc::vec::Vec;

use crate::stm::{DestLayout, RegionGrid};
use crate::{Error, Grid, Result};

pub const ALPHABET: usize = 11;
pub const BLANK: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRecognizer {
    /// Expected height of the rectified grid.
    pub rows: usize,
    /// Columns averaged into one strip.
    pub pool: usize,
    /// Neighbouring strips on each side feeding a strip's logits.
    pub context: usize,
    /// `feature_dim × ALPHABET`, row-major.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogits {
    pub steps: usize,
    /// `steps × ALPHABET`, row-major.
    pub logits: Vec<f64>,
}

impl SequenceLogits {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.logits[t * ALPHABET..(t + 1) * ALPHABET]
    }

    pub fn argmax(&self) -> Vec<usize> {
        (0..self.steps)
            .map(|t| {
                let r = self.row(t);
                (0..ALPHABET).fold(0, |best, k| if r[k] > r[best] { k } else { best })
            })
            .collect()
    }
}

impl ToyRecognizer {
    pub fn zeros(rows: usize, pool: usize, context: usize) -> Self {
        let mut m = Self { rows, pool, context, weights: Vec::new() };
        m.weights = vec![0.0; m.feature_dim() * ALPHABET];
        m
    }

    pub fn feature_dim(&self) -> usize {
        (2 * self.context + 1) * self.rows + 1
    }

    pub fn steps(&self, width: usize) -> usize {
        width / self.pool.max(1)
    }

    fn check(&self, rect: &RegionGrid) -> Result<()> {
        if rect.height != self.rows || rect.channels != 1 || self.pool == 0 || self.steps(rect.width) == 0 {
            return Err(Error::ShapeMismatch(alloc::format!(
                "recognizer expects {} rows x 1 channel with at least {} columns, got {}x{}x{}",
                self.rows,
                self.pool,
                rect.height,
                rect.width,
                rect.channels
            )));
        }
        if self.weights.len() != self.feature_dim() * ALPHABET {
            return Err(Error::ShapeMismatch("recognizer weight count does not match its shape".into()));
        }
        Ok(())
    }

    /// Row profiles, `steps × rows`.
    fn profiles(&self, rect: &RegionGrid) -> Vec<f64> {
        let t_n = self.steps(rect.width);
        let inv = 1.0 / self.pool as f64;
        let mut prof = vec![0.0; t_n * self.rows];
        for t in 0..t_n {
            for r in 0..self.rows {
                let mut s = 0.0;
                for u in t * self.pool..(t + 1) * self.pool {
                    s += *rect.at(u, r, 0);
                }
                prof[t * self.rows + r] = s * inv;
            }
        }
        prof
    }

    /// Feature vector of strip `t` (neighbour profiles, then bias).
    pub fn features(&self, rect: &RegionGrid) -> Result<Vec<f64>> {
        self.check(rect)?;
        let t_n = self.steps(rect.width);
        let prof = self.profiles(rect);
        let d = self.feature_dim();
        let mut out = vec![0.0; t_n * d];
        for t in 0..t_n {
            let f = &mut out[t * d..(t + 1) * d];
            for (slot, off) in (-(self.context as isize)..=self.context as isize).enumerate() {
                let s = t as isize + off;
                if s >= 0 && (s as usize) < t_n {
                    f[slot * self.rows..(slot + 1) * self.rows]
                        .copy_from_slice(&prof[s as usize * self.rows..(s as usize + 1) * self.rows]);
                }
            }
            f[d - 1] = 1.0;
        }
        Ok(out)
    }

    pub fn logits_from_features(&self, features: &[f64]) -> SequenceLogits {
        let d = self.feature_dim();
        let steps = features.len() / d;
        let mut logits = vec![0.0; steps * ALPHABET];
        for t in 0..steps {
            let f = &features[t * d..(t + 1) * d];
            let out = &mut logits[t * ALPHABET..(t + 1) * ALPHABET];
            for (i, fi) in f.iter().enumerate() {
                if *fi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * ALPHABET..(i + 1) * ALPHABET];
                for k in 0..ALPHABET {
                    out[k] += fi * w[k];
                }
            }
        }
        SequenceLogits { steps, logits }
    }
}

pub fn recognize(rect: &RegionGrid, model: &ToyRecognizer) -> Result<SequenceLogits> {
    let f = model.features(rect)?;
    Ok(model.logits_from_features(&f))
}

/// Exact adjoint of [`recognize`]: gradients on the rectified grid and on
/// the weights.
pub fn recognize_backward(
    d_logits: &SequenceLogits,
    rect: &RegionGrid,
    model: &ToyRecognizer,
) -> Result<(RegionGrid, Vec<f64>)> {
    let features = model.features(rect)?;
    let d = model.feature_dim();
    let t_n = model.steps(rect.width);
    if d_logits.steps != t_n || d_logits.logits.len() != t_n * ALPHABET {
        return Err(Error::ShapeMismatch(alloc::format!("{} logit steps for {} strips", d_logits.steps, t_n)));
    }
    let mut d_w = vec![0.0; d * ALPHABET];
    let mut d_feat = vec![0.0; t_n * d];
    for t in 0..t_n {
        let g = d_logits.row(t);
        let f = &features[t * d..(t + 1) * d];
        for i in 0..d {
            let w = &model.weights[i * ALPHABET..(i + 1) * ALPHABET];
            let dw = &mut d_w[i * ALPHABET..(i + 1) * ALPHABET];
            let mut acc = 0.0;
            for k in 0..ALPHABET {
                dw[k] += f[i] * g[k];
                acc += w[k] * g[k];
            }
            d_feat[t * d + i] = acc;
        }
    }
    // features → profiles
    let rows = model.rows;
    let mut d_prof = vec![0.0; t_n * rows];
    for t in 0..t_n {
        for (slot, off) in (-(model.context as isize)..=model.context as isize).enumerate() {
            let s = t as isize + off;
            if s >= 0 && (s as usize) < t_n {
                for r in 0..rows {
                    d_prof[s as usize * rows + r] += d_feat[t * d + slot * rows + r];
                }
            }
        }
    }
    // profiles → pixels
    let mut d_rect = Grid::new(rect.width, rect.height, 1, 0.0);
    let inv = 1.0 / model.pool as f64;
    for t in 0..t_n {
        for r in 0..rows {
            let g = d_prof[t * rows + r] * inv;
            for u in t * model.pool..(t + 1) * model.pool {
                *d_rect.at_mut(u, r, 0) = g;
            }
        }
    }
    Ok((d_rect, d_w))
}

/// Mean softmax cross-entropy over steps and its gradient on the logits.
pub fn cross_entropy(logits: &SequenceLogits, targets: &[usize]) -> Result<(f64, SequenceLogits)> {
    if targets.len() != logits.steps || targets.iter().any(|&k| k >= ALPHABET) {
        return Err(Error::ShapeMismatch(alloc::format!("{} targets for {} steps", targets.len(), logits.steps)));
    }
    let inv = 1.0 / logits.steps.max(1) as f64;
    let mut grad = vec![0.0; logits.logits.len()];
    let mut loss = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let row = logits.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| libm::exp(v - m)).sum();
        let lse = m + libm::log(z);
        loss += lse - row[target];
        for k in 0..ALPHABET {
            let p = libm::exp(row[k] - lse);
            grad[t * ALPHABET + k] = (p - if k == target { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss * inv, SequenceLogits { steps: logits.steps, logits: grad }))
}

/// Per-strip targets: the string stretched evenly over the fiducial span
/// `[Δw, W − Δw]` of the rectified grid, blank outside.
pub fn column_targets(digits: &[u8], layout: &DestLayout, pool: usize) -> Vec<usize> {
    let steps = layout.width / pool.max(1);
    let span = layout.width as f64 - 2.0 * layout.delta_w;
    (0..steps)
        .map(|t| {
            let u = (t as f64 + 0.5) * pool as f64 - 0.5;
            let f = (u - layout.delta_w) / span;
            if digits.is_empty() || !(0.0..1.0).contains(&f) {
                BLANK
            } else {
                digits[((f * digits.len() as f64) as usize).min(digits.len() - 1)] as usize
            }
        })
        .collect()
}

/// Fraction of strips whose argmax equals the target.
pub fn column_accuracy(logits: &SequenceLogits, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let hits = logits.argmax().iter().zip(targets).filter(|(a, b)| a == b).count();
    hits as f64 / targets.len() as f64
}
