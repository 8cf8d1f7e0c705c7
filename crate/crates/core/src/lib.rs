//! Algorithmic core of an irregular scene-text spotter.
//!
//! The crate turns polygon annotations into order-aware segmentation and
//! geometry targets, recovers text instances and their fiducial points from
//! such maps, and rectifies text regions with a differentiable thin-plate
//! spline whose gradients can be pushed back onto the geometry maps.
//!
//! Everything here is `no_std` (with `alloc`): file formats, images and the
//! command line live in the `textperc` crate.

#![no_std]
#![deny(rust_2018_idioms)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod demo;
pub mod detect;
mod error;
pub mod fiducial;
pub mod geom;
mod grid;
pub mod label;
pub mod loss;
pub mod stm;

pub use error::{Error, Result};
pub use grid::Grid;
pub use geom::{Point2, PolygonAnnotation};
