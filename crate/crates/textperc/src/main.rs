use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use textperc::annotation::{import_line_format, parse_canonical, write_canonical, AnnotationFile, PointsPerLine};
use textperc::bundle::{read_label_bundle, write_label_bundle};
use textperc::pipeline::{
    bundle_fiducials, detect_tensors, eval_ablation_par, fit_recognizer, from_pairs, label_bundle, rectify_image, synth_scenes,
    AblationReport, DemoReport, PointsFile,
};
use textperc::render::{grid_to_gray, render_overlay, OverlayStyle};
use textperc::tensor::{read_tensor, write_tensor, Tensor};
use textperc_core::demo::ablation::EvalConfig;
use textperc_core::demo::scene::{Baseline, SceneConfig, ShapeMix};
use textperc_core::demo::train::{train_demo, TrainConfig};
use textperc_core::detect::DetectConfig;
use textperc_core::fiducial::FiducialConfig;
use textperc_core::geom::CornerEstimationConfig;
use textperc_core::label::{one_hot, LabelConfig};
use textperc_core::stm::DEFAULT_LAMBDA;

#[derive(Debug, Parser)]
#[command(name = "textperc", version, about = "Order-aware text labels, fiducial points and TPS rectification")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Shape {
    Curved,
    Arc,
    Sine,
    Straight,
}

impl Shape {
    fn scene(self) -> SceneConfig {
        let shape = match self {
            Shape::Curved => ShapeMix::Curved,
            Shape::Arc => ShapeMix::Only(Baseline::Arc),
            Shape::Sine => ShapeMix::Only(Baseline::Sine),
            Shape::Straight => ShapeMix::Only(Baseline::Straight),
        };
        SceneConfig { shape, ..SceneConfig::default() }
    }

    fn name(self) -> &'static str {
        match self {
            Shape::Curved => "curved",
            Shape::Arc => "arc",
            Shape::Sine => "sine",
            Shape::Straight => "straight",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoMode {
    PerturbedGt,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rasterize score and geometry maps into a label bundle directory.
    GenLabels {
        #[arg(long)]
        annotations: PathBuf,
        /// Map width; read from the referenced image when omitted.
        #[arg(long, requires = "height")]
        width: Option<usize>,
        #[arg(long, requires = "width")]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate 2N fiducial points per instance of a label bundle.
    Fiducials {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 7)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rectify one instance of an image onto a W × H rectangle.
    Rectify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// Instance (position in the points file) to rectify.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Detect instances from class scores (H×W×5) and geometry maps (H×W×12).
    Detect {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        geometry: PathBuf,
        #[arg(long, default_value_t = 7)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune perturbed ground-truth geometry maps through the recognizer.
    DemoE2e {
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = DemoMode::PerturbedGt)]
        mode: DemoMode,
        #[arg(long)]
        report: PathBuf,
    },
    /// Fiducial-count ablation on synthetic scenes.
    Eval {
        #[arg(long, value_delimiter = ',', default_value = "4,6,8,10,12,14")]
        points: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        scenes: usize,
        #[arg(long, value_enum, default_value_t = Shape::Curved)]
        shape: Shape,
        /// Scenes used to fit the toy recognizer (0 = report IoU only).
        #[arg(long, default_value_t = 25)]
        recognizer_scenes: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Draw a label bundle (and optional points) over an image.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Leave out the point indices.
        #[arg(long)]
        no_index: bool,
    },
    /// Write a synthetic scene: image, annotations, label bundle and tensors.
    Synth {
        #[arg(long, value_enum, default_value_t = Shape::Curved)]
        shape: Shape,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a comma-separated line file into a canonical annotation file.
    ImportLines {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        image_ref: String,
        /// Points per line in the fixed top/bottom layout; variable when omitted.
        #[arg(long)]
        fixed: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status 1 for bad input, 2 for failures on valid input.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).internal()?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).input()
}

fn read_points(path: &Path) -> anyhow::Result<PointsFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: PointsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.schema_version != textperc::SCHEMA_VERSION {
        bail!("{}: unsupported schema_version {}", path.display(), file.schema_version);
    }
    Ok(file)
}

fn open_rgb(path: &Path) -> anyhow::Result<image::RgbImage> {
    Ok(image::open(path).with_context(|| format!("reading {}", path.display()))?.to_rgb8())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenLabels { annotations, width, height, out } => {
            let file = parse_canonical(&annotations).input()?;
            let polys = file.to_polygons(&CornerEstimationConfig::default()).input()?;
            let (w, h) = match (width, height) {
                (Some(w), Some(h)) => (w, h),
                _ => {
                    let img = annotations.parent().unwrap_or(Path::new(".")).join(&file.image_ref);
                    let (w, h) = image::image_dimensions(&img)
                        .with_context(|| format!("reading size of {} (or pass --width/--height)", img.display()))
                        .input()?;
                    (w as usize, h as usize)
                }
            };
            let bundle = label_bundle(&polys, w, h, &LabelConfig::default()).input()?;
            write_label_bundle(&out, &bundle).input()?;
            log::info!("wrote {} instances ({}x{}) to {}", polys.len(), w, h, out.display());
        }
        Command::Fiducials { labels, n, out } => {
            let bundle = read_label_bundle(&labels).input()?;
            let cfg = FiducialConfig::with_n(n);
            cfg.validate().input()?;
            write_json(&out, &bundle_fiducials(&bundle, &cfg))?;
        }
        Command::Rectify { image, points, instance, out, width, height, lambda } => {
            let img = open_rgb(&image).input()?;
            let file = read_points(&points).input()?;
            let entry = file
                .instances
                .get(instance)
                .ok_or_else(|| anyhow!("instance {instance} not in {}", points.display()))
                .input()?;
            let pts = entry.points.as_ref().ok_or_else(|| anyhow!("instance {instance} has no points")).input()?;
            let rect = rectify_image(&img, &from_pairs(pts), width, height, lambda).input()?;
            rect.save(&out).with_context(|| format!("writing {}", out.display())).input()?;
        }
        Command::Detect { scores, geometry, n, out } => {
            let s = read_tensor(&scores).input()?.to_grid_f32().input()?;
            let g = read_tensor(&geometry).input()?.to_grid_f32().input()?;
            let cfg = DetectConfig { fiducials: FiducialConfig::with_n(n), ..DetectConfig::default() };
            cfg.fiducials.validate().input()?;
            write_json(&out, &detect_tensors(&s, &g, &cfg).input()?)?;
        }
        Command::DemoE2e { epochs, mode: DemoMode::PerturbedGt, report } => {
            let start = Instant::now();
            let r = train_demo(cli.seed, epochs, &TrainConfig::default()).internal()?;
            let out = DemoReport::new(&r, "perturbed-gt", epochs);
            if let Some(s) = &out.summary {
                log::info!(
                    "{epochs} steps in {:.2} s: recognition loss {:.4} -> {:.4}, fiducial distance {:.3} -> {:.3} px",
                    start.elapsed().as_secs_f64(),
                    s.recognition_loss_initial,
                    s.recognition_loss_final,
                    s.fiducial_distance_initial,
                    s.fiducial_distance_final
                );
            }
            write_json(&report, &out)?;
        }
        Command::Eval { points, scenes, shape, recognizer_scenes, report } => {
            let cfg = EvalConfig::default();
            let scene_cfg = shape.scene();
            let data = synth_scenes(cli.seed, scenes, &scene_cfg).internal()?;
            // fitted on seeds past the evaluation scenes
            let model = (recognizer_scenes > 0)
                .then(|| fit_recognizer(cli.seed + scenes as u64, recognizer_scenes, &scene_cfg, &cfg))
                .transpose()
                .internal()?;
            let rows = eval_ablation_par(&points, &data, model.as_ref(), &cfg).input()?;
            for r in &rows {
                log::info!("2N = {:2}: mean IoU {:.4}, column accuracy {:?}", r.points, r.mean_iou, r.column_accuracy);
            }
            let out = AblationReport {
                schema_version: textperc::SCHEMA_VERSION,
                seed: cli.seed,
                shape: shape.name().to_string(),
                scenes,
                recognizer_scenes,
                rows: rows.iter().map(Into::into).collect(),
            };
            write_json(&report, &out)?;
        }
        Command::Render { image, labels, points, out, no_index } => {
            let img = open_rgb(&image).input()?;
            let bundle = read_label_bundle(&labels).input()?;
            let sets = match points {
                Some(p) => read_points(&p).input()?.sets().input()?,
                None => Vec::new(),
            };
            let style = OverlayStyle { index_labels: !no_index, ..OverlayStyle::default() };
            let rendered = render_overlay(&img, &bundle.score, &sets, &style).input()?;
            rendered.save(&out).with_context(|| format!("writing {}", out.display())).input()?;
        }
        Command::Synth { shape, out } => {
            let scene = synth_scenes(cli.seed, 1, &shape.scene()).internal()?.remove(0);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).input()?;
            grid_to_gray(&scene.image).save(out.join("image.png")).context("writing image.png").input()?;
            write_canonical(&out.join("annotations.json"), &AnnotationFile::from_polygons("image.png", &scene.annotations)).input()?;
            let bundle = label_bundle(&scene.annotations, scene.width(), scene.height(), &LabelConfig::default()).internal()?;
            write_label_bundle(&out.join("labels"), &bundle).input()?;
            write_tensor(&out.join("scores.tpt"), &Tensor::from_grid_f32(&one_hot(&bundle.score))).input()?;
            write_tensor(&out.join("geometry.tpt"), &Tensor::from_grid_f32(&bundle.geometry.to_stacked())).input()?;
        }
        Command::ImportLines { input, image_ref, fixed, out } => {
            let mode = fixed.map_or(PointsPerLine::Variable, PointsPerLine::Fixed);
            let file = import_line_format(&input, &image_ref, mode).input()?;
            file.to_polygons(&CornerEstimationConfig::default()).input()?;
            write_canonical(&out, &file).input()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level.into()).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
