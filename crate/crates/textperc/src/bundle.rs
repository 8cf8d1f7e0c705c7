//! Label bundles: a directory of `.tpt` tensors plus `meta.json`.
//!
//! | file                   | dtype | shape      |
//! |------------------------|-------|------------|
//! | `labels.tpt`           | u8    | H × W      |
//! | `instance_ids.tpt`     | i32   | H × W      |
//! | `corner_offsets.tpt`   | f32   | H × W × 8  |
//! | `boundary_offsets.tpt` | f32   | H × W × 4  |
//! | `valid_mask.tpt`       | f32   | H × W × 12 |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use textperc_core::label::{GeometryMaps, LabelWarning, RegionClass, ScoreMaps};
use textperc_core::{Grid, PolygonAnnotation};
use thiserror::Error;

use crate::tensor::{read_tensor, write_tensor, Tensor, TensorFileError};
use crate::SCHEMA_VERSION;

pub const LABELS: &str = "labels.tpt";
pub const INSTANCE_IDS: &str = "instance_ids.tpt";
pub const CORNER_OFFSETS: &str = "corner_offsets.tpt";
pub const BOUNDARY_OFFSETS: &str = "boundary_offsets.tpt";
pub const VALID_MASK: &str = "valid_mask.tpt";
pub const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub instance_count: usize,
    /// Corner indices per annotation, `null` when unset.
    pub corners: Vec<Option<[usize; 4]>>,
    /// Human-readable label-generation warnings.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BundleMeta {
    pub fn new(width: usize, height: usize, annotations: &[PolygonAnnotation], warnings: &[LabelWarning]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            width,
            height,
            instance_count: annotations.len(),
            corners: annotations.iter().map(|a| a.corners).collect(),
            warnings: warnings.iter().map(describe_warning).collect(),
        }
    }
}

pub fn describe_warning(w: &LabelWarning) -> String {
    match w {
        LabelWarning::Skipped { instance, reason } => format!("instance {instance} skipped: {reason:?}"),
        LabelWarning::Tiny { instance, min_len } => {
            format!("instance {instance} is tiny (shortest edge {min_len:.2} px), no geometry supervision")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelBundle {
    pub score: ScoreMaps,
    pub geometry: GeometryMaps,
    pub meta: BundleMeta,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    Tensor(#[from] TensorFileError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Meta { path: String, source: serde_json::Error },
    #[error("inconsistent bundle: {0}")]
    Inconsistent(String),
}

pub fn write_label_bundle(dir: &Path, bundle: &LabelBundle) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(|source| BundleError::Io { path: dir.display().to_string(), source })?;
    let labels = Grid::from_vec(
        bundle.score.width(),
        bundle.score.height(),
        1,
        bundle.score.labels.data.iter().map(|&c| c as u8).collect(),
    )
    .expect("same shape as the label grid");
    let ids = Grid::from_vec(
        bundle.score.width(),
        bundle.score.height(),
        1,
        bundle.score.instance_ids.data.iter().map(|&i| i as i32).collect(),
    )
    .expect("same shape as the id grid");
    write_tensor(&dir.join(LABELS), &Tensor::from_grid_u8(&labels))?;
    write_tensor(&dir.join(INSTANCE_IDS), &Tensor::from_grid_i32(&ids))?;
    write_tensor(&dir.join(CORNER_OFFSETS), &Tensor::from_grid_f32(&bundle.geometry.corner_offsets))?;
    write_tensor(&dir.join(BOUNDARY_OFFSETS), &Tensor::from_grid_f32(&bundle.geometry.boundary_offsets))?;
    write_tensor(&dir.join(VALID_MASK), &Tensor::from_grid_f32(&bundle.geometry.valid_mask))?;
    let meta = serde_json::to_string_pretty(&bundle.meta).expect("meta always serializes");
    let path = dir.join(META);
    fs::write(&path, meta).map_err(|source| BundleError::Io { path: path.display().to_string(), source })
}

fn f32_grid(dir: &Path, name: &str, channels: usize, w: usize, h: usize) -> Result<Grid<f32>, BundleError> {
    let path = dir.join(name);
    let g = read_tensor(&path)?
        .to_grid_f32()
        .map_err(|source| TensorFileError::Format { path: path.display().to_string(), source })?;
    if (g.width, g.height, g.channels) != (w, h, channels) {
        return Err(BundleError::Inconsistent(format!(
            "{name} is {}×{}×{}, expected {h}×{w}×{channels}",
            g.height, g.width, g.channels
        )));
    }
    Ok(g)
}

pub fn read_label_bundle(dir: &Path) -> Result<LabelBundle, BundleError> {
    let path = dir.join(META);
    let text = fs::read_to_string(&path).map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|source| BundleError::Meta { path: path.display().to_string(), source })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(BundleError::Inconsistent(format!("unsupported schema_version {}", meta.schema_version)));
    }
    let (w, h) = (meta.width, meta.height);
    let path = dir.join(LABELS);
    let labels = read_tensor(&path)?
        .to_grid_u8()
        .map_err(|source| TensorFileError::Format { path: path.display().to_string(), source })?;
    let path = dir.join(INSTANCE_IDS);
    let ids = read_tensor(&path)?
        .to_grid_i32()
        .map_err(|source| TensorFileError::Format { path: path.display().to_string(), source })?;
    for (name, g) in [(LABELS, (labels.width, labels.height, labels.channels)), (INSTANCE_IDS, (ids.width, ids.height, ids.channels))] {
        if g != (w, h, 1) {
            return Err(BundleError::Inconsistent(format!("{name} is {}×{}×{}, expected {h}×{w}", g.1, g.0, g.2)));
        }
    }
    let classes = labels
        .data
        .iter()
        .map(|&v| RegionClass::from_u8(v).ok_or_else(|| BundleError::Inconsistent(format!("label value {v} out of range"))))
        .collect::<Result<Vec<_>, _>>()?;
    let instance_ids = ids
        .data
        .iter()
        .map(|&v| {
            u32::try_from(v)
                .ok()
                .filter(|&id| id as usize <= meta.instance_count)
                .ok_or_else(|| BundleError::Inconsistent(format!("instance id {v} out of range")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let score = ScoreMaps {
        labels: Grid::from_vec(w, h, 1, classes).expect("checked shape"),
        instance_ids: Grid::from_vec(w, h, 1, instance_ids).expect("checked shape"),
    };
    let geometry = GeometryMaps {
        corner_offsets: f32_grid(dir, CORNER_OFFSETS, 8, w, h)?,
        boundary_offsets: f32_grid(dir, BOUNDARY_OFFSETS, 4, w, h)?,
        valid_mask: f32_grid(dir, VALID_MASK, 12, w, h)?,
    };
    Ok(LabelBundle { score, geometry, meta })
}
