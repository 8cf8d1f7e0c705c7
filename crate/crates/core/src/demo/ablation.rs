//! Detection and recognition quality as a function of the fiducial count.

use alloc::vec;
use alloc::vec::Vec;

use super::recognizer::{column_accuracy, column_targets, cross_entropy, recognize_backward, ToyRecognizer, ALPHABET};
use super::scene::SyntheticScene;
use crate::detect::{detect_from_labels, polygon_iou, DetectConfig};
use crate::fiducial::{FiducialConfig, FiducialSet};
use crate::label::{gen_labels, LabelConfig};
use crate::stm::{fit_to_layout, warp, DestLayout, DEFAULT_LAMBDA};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub labels: LabelConfig,
    pub detect: DetectConfig,
    pub rect_width: usize,
    pub rect_height: usize,
    pub lambda_tps: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            labels: LabelConfig::default(),
            detect: DetectConfig::default(),
            rect_width: 128,
            rect_height: 16,
            lambda_tps: DEFAULT_LAMBDA,
        }
    }
}

impl EvalConfig {
    pub fn layout(&self, n: usize) -> DestLayout {
        DestLayout::new(self.rect_width, self.rect_height, n)
    }
}

/// Result for one annotated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEval {
    /// Best IoU against any reported detection (0 when none overlaps).
    pub iou: f64,
    /// Per-strip accuracy of the recognizer on the matched detection.
    pub column_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub instances: Vec<InstanceEval>,
    /// Detections reported by the pipeline.
    pub reported: usize,
    /// Detections dropped by a filter.
    pub filtered: usize,
}

/// Runs labels → overlay → components → matching → fiducials on one scene
/// with `n` points per side and scores every annotation.
pub fn eval_scene(
    scene: &SyntheticScene,
    n: usize,
    recognizer: Option<&ToyRecognizer>,
    cfg: &EvalConfig,
) -> Result<SceneEval> {
    let (score, geo, _) = gen_labels(&scene.annotations, scene.width(), scene.height(), &cfg.labels)?;
    let detect_cfg = DetectConfig { fiducials: FiducialConfig { n, ..cfg.detect.fiducials }, ..cfg.detect };
    let detections = detect_from_labels(&score.labels, &geo, &detect_cfg)?;
    let reported: Vec<&FiducialSet> =
        detections.iter().filter(|d| d.is_reported()).filter_map(|d| d.fiducials.as_ref()).collect();
    let filtered = detections.iter().filter(|d| !d.is_reported()).count();
    let layout = cfg.layout(n);
    let mut instances = Vec::with_capacity(scene.annotations.len());
    for (i, ann) in scene.annotations.iter().enumerate() {
        let best = reported
            .iter()
            .map(|f| (polygon_iou(&f.points, &ann.points), *f))
            .fold(None, |acc: Option<(f64, &FiducialSet)>, cur| match acc {
                Some(a) if a.0 >= cur.0 => Some(a),
                _ => Some(cur),
            });
        let (iou, matched) = match best {
            Some((iou, f)) if iou > 0.0 => (iou, Some(f)),
            _ => (0.0, None),
        };
        let column_accuracy = match (recognizer, matched) {
            (Some(model), Some(f)) => {
                let t = fit_to_layout(f, &layout, cfg.lambda_tps)?;
                let rect = warp(&scene.image, &t, &layout)?;
                let logits = super::recognizer::recognize(&rect, model)?;
                Some(column_accuracy(&logits, &column_targets(&scene.digits(i), &layout, model.pool)))
            }
            (Some(_), None) => Some(0.0),
            _ => None,
        };
        instances.push(InstanceEval { iou, column_accuracy });
    }
    Ok(SceneEval { instances, reported: reported.len(), filtered })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    /// Total fiducial count `2N`.
    pub points: usize,
    pub mean_iou: f64,
    pub column_accuracy: Option<f64>,
    pub instances: usize,
    pub filtered: usize,
}

/// Aggregates per-scene results for one fiducial count.
pub fn summarize(points: usize, evals: &[SceneEval]) -> AblationRow {
    let all: Vec<&InstanceEval> = evals.iter().flat_map(|e| &e.instances).collect();
    let n = all.len().max(1) as f64;
    let accs: Vec<f64> = all.iter().filter_map(|i| i.column_accuracy).collect();
    AblationRow {
        points,
        mean_iou: all.iter().map(|i| i.iou).sum::<f64>() / n,
        column_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
        instances: all.len(),
        filtered: evals.iter().map(|e| e.filtered).sum(),
    }
}

/// Mean polygon IoU (and recognizer accuracy when given) per total point
/// count `2N`.
pub fn eval_ablation(
    point_counts: &[usize],
    scenes: &[SyntheticScene],
    recognizer: Option<&ToyRecognizer>,
    cfg: &EvalConfig,
) -> Result<Vec<AblationRow>> {
    point_counts
        .iter()
        .map(|&two_n| {
            if two_n < 4 || two_n % 2 != 0 {
                return Err(Error::InvalidConfig("fiducial counts must be even and at least 4"));
            }
            let evals = scenes.iter().map(|s| eval_scene(s, two_n / 2, recognizer, cfg)).collect::<Result<Vec<_>>>()?;
            Ok(summarize(two_n, &evals))
        })
        .collect()
}

/// Fits the toy recognizer on rectifications through the annotated
/// polygons themselves (their points are used directly as fiducials).
pub fn train_recognizer_on_annotations(
    scenes: &[SyntheticScene],
    cfg: &EvalConfig,
    pool: usize,
    context: usize,
    epochs: usize,
    lr: f64,
) -> Result<ToyRecognizer> {
    let mut model = ToyRecognizer::zeros(cfg.rect_height, pool, context);
    let mut samples = Vec::new();
    for scene in scenes {
        for (i, ann) in scene.annotations.iter().enumerate() {
            let f = FiducialSet::new(ann.points.clone())?;
            let layout = cfg.layout(f.n);
            let t = fit_to_layout(&f, &layout, cfg.lambda_tps)?;
            let rect = warp(&scene.image, &t, &layout)?;
            let targets = column_targets(&scene.digits(i), &layout, pool);
            samples.push((rect, targets));
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no annotated instances to train on"));
    }
    // features do not change across epochs
    let feats: Vec<Vec<f64>> = samples.iter().map(|(r, _)| model.features(r)).collect::<Result<_>>()?;
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; model.weights.len()];
    let mut v = vec![0.0; model.weights.len()];
    for epoch in 1..=epochs {
        let mut grad = vec![0.0; model.weights.len()];
        for ((rect, targets), f) in samples.iter().zip(&feats) {
            let logits = model.logits_from_features(f);
            let (_, dl) = cross_entropy(&logits, targets)?;
            let (_, dw) = recognize_backward(&dl, rect, &model)?;
            for (g, d) in grad.iter_mut().zip(&dw) {
                *g += d / samples.len() as f64;
            }
        }
        let (c1, c2) = (1.0 - libm::pow(b1, epoch as f64), 1.0 - libm::pow(b2, epoch as f64));
        for i in 0..grad.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            model.weights[i] -= lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
        }
    }
    debug_assert_eq!(model.weights.len() % ALPHABET, 0);
    Ok(model)
}
