//! File-level operations behind the subcommands, and their JSON reports.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use textperc_core::demo::ablation::{eval_scene, summarize, train_recognizer_on_annotations, AblationRow, EvalConfig};
use textperc_core::demo::recognizer::ToyRecognizer;
use textperc_core::demo::scene::{synth_scene, SceneConfig, SyntheticScene};
use textperc_core::demo::train::{StepRecord, TrainReport};
use textperc_core::detect::{detect, DetectConfig, DetectedInstance};
use textperc_core::fiducial::{generate_fiducials, FiducialConfig, FiducialSet, InstanceRegions};
use textperc_core::geom::PolygonAnnotation;
use textperc_core::label::{gen_labels, GeometryMaps, LabelConfig};
use textperc_core::stm::{rectify, DestLayout};
use textperc_core::{Grid, Point2, Result as CoreResult};

use crate::bundle::{BundleMeta, LabelBundle};
use crate::render::{grid_to_rgb, rgb_to_grid};
use crate::SCHEMA_VERSION;

pub fn to_pairs(points: &[Point2]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

pub fn from_pairs(points: &[[f64; 2]]) -> Vec<Point2> {
    points.iter().map(|p| Point2::new(p[0], p[1])).collect()
}

/// Score and geometry maps of a `width × height` image.
pub fn label_bundle(annotations: &[PolygonAnnotation], width: usize, height: usize, cfg: &LabelConfig) -> CoreResult<LabelBundle> {
    let (score, geometry, warnings) = gen_labels(annotations, width, height, cfg)?;
    for w in &warnings {
        log::warn!("{}", crate::bundle::describe_warning(w));
    }
    let meta = BundleMeta::new(width, height, annotations, &warnings);
    Ok(LabelBundle { score, geometry, meta })
}

/// Fiducial points of one annotation; `points` is `null` when generation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePoints {
    /// 0-based annotation index.
    pub instance: usize,
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointsFile {
    pub schema_version: u32,
    /// Points per side.
    pub n: usize,
    pub instances: Vec<InstancePoints>,
}

/// Fiducials for every annotation of a bundle, using that annotation's
/// labeled pixels. Instances are independent and run in parallel.
pub fn bundle_fiducials(bundle: &LabelBundle, cfg: &FiducialConfig) -> PointsFile {
    let instances = (0..bundle.meta.instance_count)
        .into_par_iter()
        .map(|i| {
            let regions = InstanceRegions::from_score(&bundle.score, i as u32 + 1);
            match generate_fiducials(&regions, &bundle.geometry, cfg) {
                Ok(set) => InstancePoints { instance: i, points: Some(to_pairs(&set.points)), error: None },
                Err(e) => {
                    log::warn!("instance {i}: {e}");
                    InstancePoints { instance: i, points: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    PointsFile { schema_version: SCHEMA_VERSION, n: cfg.n, instances }
}

impl PointsFile {
    pub fn sets(&self) -> CoreResult<Vec<FiducialSet>> {
        self.instances.iter().filter_map(|i| i.points.as_ref()).map(|p| FiducialSet::new(from_pairs(p))).collect()
    }
}

/// Fit + warp of an RGB image onto a `width × height` rectangle.
pub fn rectify_image(image: &RgbImage, points: &[Point2], width: usize, height: usize, lambda: f64) -> CoreResult<RgbImage> {
    let set = FiducialSet::new(points.to_vec())?;
    let layout = DestLayout::new(width, height, set.n);
    let (out, _) = rectify(&rgb_to_grid(image), &set, &layout, lambda)?;
    Ok(grid_to_rgb(&out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub polygon: Option<Vec<[f64; 2]>>,
    pub fiducials: Option<Vec<[f64; 2]>>,
    pub self_intersecting: bool,
    pub center_area: usize,
    pub head_area: usize,
    pub tail_area: usize,
    /// `"reported"` or the filter reason.
    pub status: String,
}

impl From<&DetectedInstance> for DetectionRecord {
    fn from(d: &DetectedInstance) -> Self {
        Self {
            polygon: d.polygon.as_deref().map(to_pairs),
            fiducials: d.fiducials.as_ref().map(|f| to_pairs(&f.points)),
            self_intersecting: d.self_intersecting,
            center_area: d.center_area,
            head_area: d.head_area,
            tail_area: d.tail_area,
            status: d.filtered.map_or("reported", |r| r.code()).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub schema_version: u32,
    pub n: usize,
    pub detections: Vec<DetectionRecord>,
}

/// Runs detection on `H × W × 5` class scores and `H × W × 12` stacked
/// geometry channels.
pub fn detect_tensors(scores: &Grid<f32>, geometry: &Grid<f32>, cfg: &DetectConfig) -> CoreResult<DetectionsFile> {
    let geo = GeometryMaps::from_stacked(geometry)?;
    let found = detect(scores, &geo, cfg)?;
    Ok(DetectionsFile { schema_version: SCHEMA_VERSION, n: cfg.fiducials.n, detections: found.iter().map(Into::into).collect() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepJson {
    pub step: usize,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub recognition_loss: f64,
    pub corner_loss: f64,
    pub boundary_loss: f64,
    pub total_loss: f64,
    pub column_accuracy: f64,
    pub fiducial_distance: f64,
    pub fiducial_drift: f64,
    pub geometry_grad_mass: f64,
}

impl From<&StepRecord> for StepJson {
    fn from(s: &StepRecord) -> Self {
        Self {
            step: s.step,
            lambda_b: s.weights.lambda_b,
            lambda_c: s.weights.lambda_c,
            lambda_r: s.weights.lambda_r,
            recognition_loss: s.recognition_loss,
            corner_loss: s.corner_loss,
            boundary_loss: s.boundary_loss,
            total_loss: s.total_loss,
            column_accuracy: s.column_accuracy,
            fiducial_distance: s.fiducial_distance,
            fiducial_drift: s.fiducial_drift,
            geometry_grad_mass: s.geometry_grad_mass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub recognition_loss_initial: f64,
    pub recognition_loss_final: f64,
    pub recognition_loss_drop: f64,
    pub fiducial_distance_initial: f64,
    pub fiducial_distance_final: f64,
    pub geometry_grad_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: String,
    pub epochs: usize,
    pub summary: Option<DemoSummary>,
    pub steps: Vec<StepJson>,
    pub ideal_fiducials: Vec<Vec<[f64; 2]>>,
    pub initial_fiducials: Vec<Vec<[f64; 2]>>,
    pub final_fiducials: Vec<Vec<[f64; 2]>>,
    pub final_ious: Vec<f64>,
    pub final_column_accuracy: f64,
    pub aborted_at: Option<usize>,
}

impl DemoReport {
    pub fn new(report: &TrainReport, mode: &str, epochs: usize) -> Self {
        let sets = |v: &[FiducialSet]| v.iter().map(|f| to_pairs(&f.points)).collect();
        let summary = report.first().zip(report.last()).map(|(a, b)| DemoSummary {
            recognition_loss_initial: a.recognition_loss,
            recognition_loss_final: b.recognition_loss,
            recognition_loss_drop: 1.0 - b.recognition_loss / a.recognition_loss,
            fiducial_distance_initial: a.fiducial_distance,
            fiducial_distance_final: b.fiducial_distance,
            geometry_grad_mass: report.total_geometry_grad_mass(),
        });
        Self {
            schema_version: SCHEMA_VERSION,
            seed: report.seed,
            mode: mode.to_string(),
            epochs,
            summary,
            steps: report.steps.iter().map(Into::into).collect(),
            ideal_fiducials: sets(&report.ideal_fiducials),
            initial_fiducials: sets(&report.initial_fiducials),
            final_fiducials: sets(&report.final_fiducials),
            final_ious: report.final_ious.clone(),
            final_column_accuracy: report.final_column_accuracy,
            aborted_at: report.aborted_at,
        }
    }
}

/// Scenes `seed, seed + 1, …`, generated in parallel.
pub fn synth_scenes(seed: u64, count: usize, cfg: &SceneConfig) -> CoreResult<Vec<SyntheticScene>> {
    (0..count as u64).into_par_iter().map(|i| synth_scene(seed + i, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationJson {
    /// Total fiducial count `2N`.
    pub points: usize,
    pub mean_iou: f64,
    pub column_accuracy: Option<f64>,
    pub instances: usize,
    pub filtered: usize,
}

impl From<&AblationRow> for AblationJson {
    fn from(r: &AblationRow) -> Self {
        Self { points: r.points, mean_iou: r.mean_iou, column_accuracy: r.column_accuracy, instances: r.instances, filtered: r.filtered }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub seed: u64,
    pub shape: String,
    pub scenes: usize,
    pub recognizer_scenes: usize,
    pub rows: Vec<AblationJson>,
}

/// Same numbers as the core's sequential ablation, with scenes evaluated
/// in parallel for each fiducial count.
pub fn eval_ablation_par(
    point_counts: &[usize],
    scenes: &[SyntheticScene],
    recognizer: Option<&ToyRecognizer>,
    cfg: &EvalConfig,
) -> CoreResult<Vec<AblationRow>> {
    point_counts
        .iter()
        .map(|&two_n| {
            if two_n < 4 || two_n % 2 != 0 {
                return Err(textperc_core::Error::InvalidConfig("fiducial counts must be even and at least 4"));
            }
            let evals = scenes.par_iter().map(|s| eval_scene(s, two_n / 2, recognizer, cfg)).collect::<CoreResult<Vec<_>>>()?;
            Ok(summarize(two_n, &evals))
        })
        .collect()
}

/// Toy recognizer fitted on `count` scenes that do not overlap the
/// evaluation seeds.
pub fn fit_recognizer(seed: u64, count: usize, scene: &SceneConfig, cfg: &EvalConfig) -> CoreResult<ToyRecognizer> {
    let scenes = synth_scenes(seed, count, scene)?;
    train_recognizer_on_annotations(&scenes, cfg, 2, 1, 300, 0.05)
}
