//! Fiducial finetuning loop: recognition gradients flow through the warp and
//! the fiducial generator back onto the geometry-map values.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ablation::{train_recognizer_on_annotations, EvalConfig};
use super::recognizer::{column_accuracy, column_targets, cross_entropy, recognize, recognize_backward, ToyRecognizer};
use super::scene::{synth_scene, SceneConfig, SyntheticScene};
use crate::detect::polygon_iou;
use crate::fiducial::{
    accumulate_increments, generate_fiducials, generate_fiducials_traced, scatter_point_grads, FiducialConfig,
    FiducialSet, GeometryIncrement, InstanceRegions,
};
use crate::geom::Point2;
use crate::label::{gen_labels, GeometryMaps, LabelConfig, ScoreMaps, BOUNDARY_MASK_BASE};
use crate::loss::{loss_schedule, regression_losses_with_grad, total_loss, LossWeights, ScheduleConfig};
use crate::stm::{fit_to_layout, warp, warp_backward, DestLayout, RegionGrid};
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// How the starting geometry maps are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    /// Independent Gaussian noise on every supervised offset entry.
    PerPixel,
    /// One Gaussian draw per (instance, region class, channel), shared by all
    /// pixels of that region: a coherent shift of each region's targets.
    PerRegion,
}

/// Starting point of the recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecognizerInit {
    Zero,
    /// Fitted beforehand on rectifications through the annotated polygons of
    /// `scenes` separate synthetic scenes (never the training scene).
    Pretrained { scenes: usize, epochs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// Soft schedule with the step index as the epoch.
    Schedule(ScheduleConfig),
    Fixed(LossWeights),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub scene: SceneConfig,
    pub labels: LabelConfig,
    pub fiducials: FiducialConfig,
    pub rect_width: usize,
    pub rect_height: usize,
    pub lambda_tps: f64,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub perturb_sigma: f64,
    pub perturbation: Perturbation,
    pub weights: WeightMode,
    pub train_recognizer: bool,
    pub recognizer_init: RecognizerInit,
    pub pool: usize,
    pub context: usize,
    pub smooth_l1_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            labels: LabelConfig::default(),
            fiducials: FiducialConfig::default(),
            rect_width: 128,
            rect_height: 16,
            lambda_tps: crate::stm::DEFAULT_LAMBDA,
            lr: 0.05,
            optimizer: Optimizer::adam(),
            perturb_sigma: 2.0,
            perturbation: Perturbation::PerRegion,
            weights: WeightMode::Schedule(ScheduleConfig::default()),
            train_recognizer: true,
            recognizer_init: RecognizerInit::Zero,
            pool: 2,
            context: 1,
            smooth_l1_sigma: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn layout(&self) -> DestLayout {
        DestLayout::new(self.rect_width, self.rect_height, self.fiducials.n)
    }

    fn weights_at(&self, step: usize) -> LossWeights {
        match self.weights {
            WeightMode::Schedule(s) => loss_schedule(step as u32, &s),
            WeightMode::Fixed(w) => w,
        }
    }
}

/// One instance's recognition forward and backward pass.
#[derive(Debug, Clone)]
pub struct RecognitionPass {
    pub loss: f64,
    pub accuracy: f64,
    pub fiducials: FiducialSet,
    pub d_points: Vec<Point2>,
    pub d_weights: Vec<f64>,
    pub increments: Vec<GeometryIncrement>,
}

/// Recognition on one instance with fixed regions: generate fiducials from
/// `geo`, rectify, recognize, score against `targets`, and push the
/// gradient back to points and geometry-map entries.
#[allow(clippy::too_many_arguments)]
pub fn recognition_pass(
    image: &RegionGrid,
    regions: &InstanceRegions,
    geo: &GeometryMaps,
    targets: &[usize],
    model: &ToyRecognizer,
    layout: &DestLayout,
    fid_cfg: &FiducialConfig,
    lambda_tps: f64,
) -> Result<RecognitionPass> {
    let (fiducials, trace) = generate_fiducials_traced(regions, geo, fid_cfg)?;
    let t = fit_to_layout(&fiducials, layout, lambda_tps)?;
    let rect = warp(image, &t, layout)?;
    let logits = recognize(&rect, model)?;
    let (loss, d_logits) = cross_entropy(&logits, targets)?;
    let accuracy = column_accuracy(&logits, targets);
    let (d_rect, d_weights) = recognize_backward(&d_logits, &rect, model)?;
    let grads = warp_backward(&d_rect, image, &t, layout)?;
    let increments = scatter_point_grads(&grads.d_fiducials, &trace)?;
    Ok(RecognitionPass { loss, accuracy, fiducials, d_points: grads.d_fiducials, d_weights, increments })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub weights: LossWeights,
    pub recognition_loss: f64,
    pub corner_loss: f64,
    pub boundary_loss: f64,
    pub total_loss: f64,
    pub column_accuracy: f64,
    /// Mean distance of the current fiducials to those of the clean maps.
    pub fiducial_distance: f64,
    /// Mean movement of the fiducials since the previous step.
    pub fiducial_drift: f64,
    /// `Σ|·|` of the recognition gradient routed onto the geometry maps
    /// (before the loss weight).
    pub geometry_grad_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub ideal_fiducials: Vec<FiducialSet>,
    pub initial_fiducials: Vec<FiducialSet>,
    pub final_fiducials: Vec<FiducialSet>,
    /// Polygon IoU of the final fiducials against the annotations.
    pub final_ious: Vec<f64>,
    pub final_column_accuracy: f64,
    /// Step at which a non-finite loss stopped training.
    pub aborted_at: Option<usize>,
}

impl TrainReport {
    pub fn first(&self) -> Option<&StepRecord> {
        self.steps.first()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn total_geometry_grad_mass(&self) -> f64 {
        self.steps.iter().map(|s| s.geometry_grad_mass).sum()
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut [f64], grads: &[f64]) {
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - libm::pow(beta1, self.t as f64);
                let c2 = 1.0 - libm::pow(beta2, self.t as f64);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    if self.m[i] != 0.0 {
                        params[i] -= lr * (self.m[i] / c1) / (libm::sqrt(self.v[i] / c2) + eps);
                    }
                }
            }
        }
    }
}

fn stacked_f64(geo: &GeometryMaps) -> Vec<f64> {
    geo.to_stacked().data.iter().map(|&v| v as f64).collect()
}

fn write_stacked(geo: &mut GeometryMaps, values: &[f64]) {
    let (w, h) = (geo.width(), geo.height());
    for y in 0..h {
        for x in 0..w {
            for c in 0..12 {
                *geo.stacked_mut(x, y, c) = values[(y * w + x) * 12 + c] as f32;
            }
        }
    }
}

/// Adds Gaussian noise to every supervised offset entry.
pub fn perturb_geometry(
    geo: &GeometryMaps,
    score: &ScoreMaps,
    sigma: f64,
    model: Perturbation,
    rng: &mut ChaCha8Rng,
) -> Result<GeometryMaps> {
    let normal = Normal::new(0.0, sigma).map_err(|_| Error::InvalidConfig("perturbation sigma must be finite and >= 0"))?;
    let mut out = geo.clone();
    let (w, h) = (geo.width(), geo.height());
    match model {
        Perturbation::PerPixel => {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..12 {
                        if *geo.valid_mask.at(x, y, c) != 0.0 {
                            *out.stacked_mut(x, y, c) += normal.sample(rng) as f32;
                        }
                    }
                }
            }
        }
        Perturbation::PerRegion => {
            let instances = score.instance_ids.data.iter().copied().max().unwrap_or(0) as usize;
            // (instance, class, channel) → shift, drawn in a fixed order
            let shifts: Vec<f64> = (0..instances * 5 * 12).map(|_| normal.sample(rng)).collect();
            for y in 0..h {
                for x in 0..w {
                    let id = score.instance(x, y) as usize;
                    if id == 0 {
                        continue;
                    }
                    let class = score.label(x, y) as usize;
                    for c in 0..12 {
                        if *geo.valid_mask.at(x, y, c) != 0.0 {
                            *out.stacked_mut(x, y, c) += shifts[((id - 1) * 5 + class) * 12 + c] as f32;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Everything the loop needs about one scene.
pub struct DemoSetup {
    pub scene: SyntheticScene,
    pub score: ScoreMaps,
    pub gt_geo: GeometryMaps,
    pub regions: Vec<InstanceRegions>,
    pub targets: Vec<Vec<usize>>,
    pub ideal: Vec<FiducialSet>,
}

pub fn demo_setup(seed: u64, cfg: &TrainConfig) -> Result<DemoSetup> {
    let scene = synth_scene(seed, &cfg.scene)?;
    let (score, gt_geo, _) = gen_labels(&scene.annotations, scene.width(), scene.height(), &cfg.labels)?;
    let layout = cfg.layout();
    let mut regions = Vec::new();
    let mut targets = Vec::new();
    let mut ideal = Vec::new();
    for i in 0..scene.annotations.len() {
        let r = InstanceRegions::from_score(&score, i as u32 + 1);
        ideal.push(generate_fiducials(&r, &gt_geo, &cfg.fiducials)?);
        regions.push(r);
        targets.push(column_targets(&scene.digits(i), &layout, cfg.pool));
    }
    if regions.is_empty() {
        return Err(Error::InvalidConfig("demo scene has no text instances"));
    }
    Ok(DemoSetup { scene, score, gt_geo, regions, targets, ideal })
}

fn mean_distance(a: &[FiducialSet], b: &[FiducialSet]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for (p, q) in a.iter().zip(b) {
        for (x, y) in p.points.iter().zip(&q.points) {
            s += x.dist(*y);
            n += 1;
        }
    }
    if n == 0 { 0.0 } else { s / n as f64 }
}

/// Runs `epochs` finetuning steps on one synthetic scene, starting from
/// perturbed ground-truth geometry maps and a zero recognizer.
pub fn train_demo(seed: u64, epochs: usize, cfg: &TrainConfig) -> Result<TrainReport> {
    let setup = demo_setup(seed, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1d0);
    let start = perturb_geometry(&setup.gt_geo, &setup.score, cfg.perturb_sigma, cfg.perturbation, &mut rng)?;
    let model = initial_recognizer(seed, cfg)?;
    train_from(&setup, start, model, seed, epochs, cfg)
}

/// The recognizer `train_demo` starts from.
pub fn initial_recognizer(seed: u64, cfg: &TrainConfig) -> Result<ToyRecognizer> {
    match cfg.recognizer_init {
        RecognizerInit::Zero => Ok(ToyRecognizer::zeros(cfg.rect_height, cfg.pool, cfg.context)),
        RecognizerInit::Pretrained { scenes, epochs } => {
            let pool: Vec<SyntheticScene> = (0..scenes as u64)
                .map(|i| synth_scene(seed.wrapping_mul(0x9e37_79b9).wrapping_add(0x1000 + i), &cfg.scene))
                .collect::<Result<_>>()?;
            let eval = EvalConfig {
                labels: cfg.labels,
                rect_width: cfg.rect_width,
                rect_height: cfg.rect_height,
                lambda_tps: cfg.lambda_tps,
                ..EvalConfig::default()
            };
            train_recognizer_on_annotations(&pool, &eval, cfg.pool, cfg.context, epochs, cfg.lr)
        }
    }
}

/// The loop itself, from explicit starting maps and recognizer.
pub fn train_from(
    setup: &DemoSetup,
    start: GeometryMaps,
    mut model: ToyRecognizer,
    seed: u64,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let layout = cfg.layout();
    let image = &setup.scene.image;
    let n_inst = setup.regions.len();
    let mut geo = start;
    let mut params = stacked_f64(&geo);
    let mut geo_opt = OptState::new(params.len());
    let mut rec_opt = OptState::new(model.weights.len());

    let fiducials_of = |geo: &GeometryMaps| -> Result<Vec<FiducialSet>> {
        setup.regions.iter().map(|r| generate_fiducials(r, geo, &cfg.fiducials)).collect()
    };
    let initial_fiducials = fiducials_of(&geo)?;
    let mut prev = initial_fiducials.clone();
    let mut steps = Vec::with_capacity(epochs);
    let mut aborted_at = None;

    for step in 0..epochs {
        let w = cfg.weights_at(step);
        let (reg, reg_grad) = regression_losses_with_grad(&geo, &setup.gt_geo, cfg.smooth_l1_sigma)?;
        let mut rec_loss = 0.0;
        let mut accuracy = 0.0;
        let mut rec_geo = Grid::new(geo.width(), geo.height(), 12, 0.0f64);
        let mut d_w = vec![0.0; model.weights.len()];
        let mut current = Vec::with_capacity(n_inst);
        for (regions, targets) in setup.regions.iter().zip(&setup.targets) {
            let pass =
                recognition_pass(image, regions, &geo, targets, &model, &layout, &cfg.fiducials, cfg.lambda_tps)?;
            rec_loss += pass.loss / n_inst as f64;
            accuracy += pass.accuracy / n_inst as f64;
            accumulate_increments(&mut rec_geo, &pass.increments);
            for (a, b) in d_w.iter_mut().zip(&pass.d_weights) {
                *a += b / n_inst as f64;
            }
            current.push(pass.fiducials);
        }
        let total = match total_loss(0.0, reg.corner, reg.boundary, rec_loss, &w) {
            Ok(t) => t,
            Err(_) => {
                aborted_at = Some(step);
                break;
            }
        };
        let mass: f64 = rec_geo.data.iter().map(|v| libm::fabs(*v)).sum::<f64>() / n_inst as f64;
        steps.push(StepRecord {
            step,
            weights: w,
            recognition_loss: rec_loss,
            corner_loss: reg.corner,
            boundary_loss: reg.boundary,
            total_loss: total,
            column_accuracy: accuracy,
            fiducial_distance: mean_distance(&current, &setup.ideal),
            fiducial_drift: mean_distance(&current, &prev),
            geometry_grad_mass: mass,
        });
        prev = current;

        let grads: Vec<f64> = (0..params.len())
            .map(|i| {
                let reg_w = if i % 12 >= BOUNDARY_MASK_BASE { w.lambda_c } else { w.lambda_b };
                reg_w * reg_grad.data[i] + w.lambda_r * rec_geo.data[i] / n_inst as f64
            })
            .collect();
        geo_opt.step(cfg.optimizer, cfg.lr, &mut params, &grads);
        write_stacked(&mut geo, &params);
        if cfg.train_recognizer {
            let g: Vec<f64> = d_w.iter().map(|v| w.lambda_r * v).collect();
            rec_opt.step(cfg.optimizer, cfg.lr, &mut model.weights, &g);
        }
    }

    let final_fiducials = fiducials_of(&geo)?;
    let final_ious = final_fiducials
        .iter()
        .zip(&setup.scene.annotations)
        .map(|(f, a)| polygon_iou(&f.points, &a.points))
        .collect();
    let mut final_acc = 0.0;
    for (f, targets) in final_fiducials.iter().zip(&setup.targets) {
        let t = fit_to_layout(f, &layout, cfg.lambda_tps)?;
        let logits = recognize(&warp(image, &t, &layout)?, &model)?;
        final_acc += column_accuracy(&logits, targets) / n_inst as f64;
    }
    Ok(TrainReport {
        seed,
        steps,
        ideal_fiducials: setup.ideal.clone(),
        initial_fiducials,
        final_fiducials,
        final_ious,
        final_column_accuracy: final_acc,
        aborted_at,
    })
}
