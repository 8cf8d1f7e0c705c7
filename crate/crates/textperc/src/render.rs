//! PNG rendering of label overlays and fiducial points, plus conversions
//! between `image` buffers and core grids.

use image::{GrayImage, Luma, Rgb, RgbImage};
use textperc_core::demo::font::{self, GLYPH_H, GLYPH_W};
use textperc_core::fiducial::FiducialSet;
use textperc_core::label::{RegionClass, ScoreMaps};
use textperc_core::Grid;
use thiserror::Error;

pub const CENTER: Rgb<u8> = Rgb([255, 105, 180]);
pub const HEAD: Rgb<u8> = Rgb([0, 200, 0]);
pub const TAIL: Rgb<u8> = Rgb([255, 220, 0]);
pub const BOUNDARY: Rgb<u8> = Rgb([30, 90, 255]);
pub const DOT: Rgb<u8> = Rgb([255, 0, 0]);
pub const LABEL: Rgb<u8> = Rgb([255, 255, 255]);

pub fn class_color(class: RegionClass) -> Option<Rgb<u8>> {
    match class {
        RegionClass::Background => None,
        RegionClass::Center => Some(CENTER),
        RegionClass::Head => Some(HEAD),
        RegionClass::Tail => Some(TAIL),
        RegionClass::TopBottomBoundary => Some(BOUNDARY),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlayStyle {
    /// Opacity of the class colors.
    pub alpha: f32,
    /// Draw each point's index next to it.
    pub index_labels: bool,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { alpha: 0.5, index_labels: true }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("image is {image:?} but the label map is {labels:?}")]
    SizeMismatch { image: (u32, u32), labels: (u32, u32) },
}

/// Blends `color` over `base` with opacity `alpha`.
pub fn blend(base: Rgb<u8>, color: Rgb<u8>, alpha: f32) -> Rgb<u8> {
    Rgb(core::array::from_fn(|i| ((1.0 - alpha) * base.0[i] as f32 + alpha * color.0[i] as f32).round() as u8))
}

/// Class-colored overlay of `score` on `image`, then a dot at every
/// fiducial point (rounded to the nearest pixel) with its index.
pub fn render_overlay(
    image: &RgbImage,
    score: &ScoreMaps,
    fiducials: &[FiducialSet],
    style: &OverlayStyle,
) -> Result<RgbImage, RenderError> {
    let labels = (score.width() as u32, score.height() as u32);
    if image.dimensions() != labels {
        return Err(RenderError::SizeMismatch { image: image.dimensions(), labels });
    }
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        if let Some(c) = class_color(score.label(x as usize, y as usize)) {
            *px = blend(*px, c, style.alpha);
        }
    }
    for set in fiducials {
        for (i, p) in set.points.iter().enumerate() {
            let (x, y) = (p.x.round() as i64, p.y.round() as i64);
            if style.index_labels {
                draw_number(&mut out, i, x + 2, y - GLYPH_H as i64 - 1);
            }
            put(&mut out, x, y, DOT);
        }
    }
    Ok(out)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_number(img: &mut RgbImage, value: usize, x0: i64, y0: i64) {
    for (k, d) in value.to_string().bytes().enumerate() {
        let left = x0 + (k * font::CELL_W) as i64;
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if font::ink(d - b'0', col, row) {
                    put(img, left + col as i64, y0 + row as i64, LABEL);
                }
            }
        }
    }
}

/// `H × W × 3` grid with values in `[0, 1]`.
pub fn rgb_to_grid(img: &RgbImage) -> Grid<f64> {
    let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Grid::from_vec(img.width() as usize, img.height() as usize, 3, data).expect("rgb buffer has 3 channels")
}

/// Converts a 1- or 3-channel grid with values in `[0, 1]`; a single
/// channel is replicated. Values are clamped.
pub fn grid_to_rgb(g: &Grid<f64>) -> RgbImage {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(g.width as u32, g.height as u32, |x, y| {
        let px = g.pixel(x as usize, y as usize);
        if g.channels >= 3 {
            Rgb([q(px[0]), q(px[1]), q(px[2])])
        } else {
            Rgb([q(px[0]); 3])
        }
    })
}

pub fn grid_to_gray(g: &Grid<f64>) -> GrayImage {
    GrayImage::from_fn(g.width as u32, g.height as u32, |x, y| {
        Luma([(g.at(x as usize, y as usize, 0).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}
