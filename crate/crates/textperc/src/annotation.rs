//! Canonical annotation files and the comma-separated line importer.
//!
//! The canonical format is JSON:
//!
//! ```json
//! { "schema_version": 1, "image_ref": "img_001.png",
//!   "instances": [ { "points": [[0, 0], [100, 0], [100, 32], [0, 32]],
//!                    "transcription": "word", "fixed_layout": null } ] }
//! ```
//!
//! Points are listed clockwise on screen, starting at the top-left of the
//! text. `fixed_layout = k` means the `k` points split evenly into a top
//! and a bottom row, so the corners are known from their indices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use textperc_core::geom::{CornerEstimationConfig, PolygonAnnotation};
use textperc_core::{Error as CoreError, Point2};
use thiserror::Error;

use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub image_ref: String,
    pub instances: Vec<AnnotationInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationInstance {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub transcription: Option<String>,
    #[serde(default)]
    pub fixed_layout: Option<usize>,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid annotation JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}")]
    Schema(u32),
    #[error("instance {index}: {reason}")]
    Instance { index: usize, reason: String },
    #[error("instance {index}: {source}")]
    Polygon { index: usize, source: CoreError },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

impl AnnotationInstance {
    pub fn to_points(&self) -> Vec<Point2> {
        self.points.iter().map(|p| Point2::new(p[0], p[1])).collect()
    }

    fn check(&self, index: usize) -> Result<(), AnnotationError> {
        let fail = |reason: String| Err(AnnotationError::Instance { index, reason });
        if self.points.len() < 4 {
            return fail(format!("{} points, at least 4 required", self.points.len()));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return fail("non-finite coordinate".into());
        }
        if let Some(k) = self.fixed_layout {
            if k != self.points.len() || k % 2 != 0 {
                return fail(format!("fixed_layout {k} does not fit {} points", self.points.len()));
            }
        }
        Ok(())
    }
}

impl AnnotationFile {
    pub fn new(image_ref: impl Into<String>, instances: Vec<AnnotationInstance>) -> Self {
        Self { schema_version: SCHEMA_VERSION, image_ref: image_ref.into(), instances }
    }

    /// Structural checks: schema version, point counts, finiteness and
    /// fixed layouts. Errors name the offending instance.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(AnnotationError::Schema(self.schema_version));
        }
        self.instances.iter().enumerate().try_for_each(|(i, inst)| inst.check(i))
    }

    pub fn from_json(text: &str) -> Result<Self, AnnotationError> {
        let file: Self = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation files always serialize")
    }

    /// Validated polygons with corners: by index for fixed layouts, by the
    /// angle heuristic otherwise.
    pub fn to_polygons(&self, cfg: &CornerEstimationConfig) -> Result<Vec<PolygonAnnotation>, AnnotationError> {
        self.validate()?;
        self.instances
            .iter()
            .enumerate()
            .map(|(index, inst)| {
                let poly = PolygonAnnotation::with_identified_corners(inst.to_points(), cfg, inst.fixed_layout)
                    .map_err(|source| AnnotationError::Polygon { index, source })?;
                Ok(match &inst.transcription {
                    Some(t) => poly.with_transcription(t.clone()),
                    None => poly,
                })
            })
            .collect()
    }

    /// Canonical form of core polygons. A polygon whose corners coincide
    /// with the even top/bottom index split is stored with a fixed layout so
    /// its corners survive a round trip.
    pub fn from_polygons(image_ref: impl Into<String>, polys: &[PolygonAnnotation]) -> Self {
        let instances = polys
            .iter()
            .map(|p| {
                let k = p.points.len();
                let index_layout = k % 2 == 0 && p.corners == Some([0, k / 2 - 1, k / 2, k - 1]);
                AnnotationInstance {
                    points: p.points.iter().map(|q| [q.x, q.y]).collect(),
                    transcription: p.transcription.clone(),
                    fixed_layout: index_layout.then_some(k),
                }
            })
            .collect();
        Self::new(image_ref, instances)
    }
}

pub fn parse_canonical(path: &Path) -> Result<AnnotationFile, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: path.display().to_string(), source })?;
    AnnotationFile::from_json(&text)
}

pub fn write_canonical(path: &Path, file: &AnnotationFile) -> Result<(), AnnotationError> {
    fs::write(path, file.to_json()).map_err(|source| AnnotationError::Io { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointsPerLine {
    /// Every line has exactly this many points in the even top/bottom layout.
    Fixed(usize),
    /// Any count of at least 4; corners come from the angle heuristic.
    Variable,
}

/// Parses `x1,y1,…,xk,yk[,transcription]` lines. The coordinates are the
/// longest numeric prefix; whatever follows (commas included) is the
/// transcription. Blank lines are skipped; line numbers are 1-based.
pub fn import_lines(text: &str, image_ref: &str, mode: PointsPerLine) -> Result<AnnotationFile, AnnotationError> {
    let mut instances = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fail = |reason: String| AnnotationError::Line { line, reason };
        let fields: Vec<&str> = raw.split(',').collect();
        let numeric = fields.iter().take_while(|f| f.trim().parse::<f64>().is_ok()).count();
        let coords: Vec<f64> = fields[..numeric].iter().map(|f| f.trim().parse().unwrap()).collect();
        if numeric % 2 != 0 {
            return Err(fail(format!("odd coordinate count {numeric}")));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite coordinate".into()));
        }
        let points: Vec<[f64; 2]> = coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        if points.len() < 4 {
            return Err(fail(format!("{} points, at least 4 required", points.len())));
        }
        let fixed_layout = match mode {
            PointsPerLine::Fixed(k) if k != points.len() => {
                return Err(fail(format!("expected {k} points, got {}", points.len())));
            }
            PointsPerLine::Fixed(k) => Some(k),
            PointsPerLine::Variable => None,
        };
        let transcription = (numeric < fields.len()).then(|| fields[numeric..].join(","));
        instances.push(AnnotationInstance { points, transcription, fixed_layout });
    }
    let file = AnnotationFile::new(image_ref, instances);
    file.validate()?;
    Ok(file)
}

pub fn import_line_format(path: &Path, image_ref: &str, mode: PointsPerLine) -> Result<AnnotationFile, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io { path: path.display().to_string(), source })?;
    import_lines(&text, image_ref, mode)
}
