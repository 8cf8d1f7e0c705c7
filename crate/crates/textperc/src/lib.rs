//! File formats, rendering and batch drivers around `textperc-core`.
//!
//! * [`tensor`]: the `.tpt` little-endian tensor container.
//! * [`bundle`]: label bundles (a directory of tensors plus `meta.json`).
//! * [`annotation`]: the canonical JSON annotation format and the
//!   comma-separated line importer.
//! * [`render`]: class-colored overlays with fiducial dots as PNG.
//! * [`pipeline`]: the operations behind the `textperc` command line and
//!   their JSON reports.

pub mod annotation;
pub mod bundle;
pub mod pipeline;
pub mod render;
pub mod tensor;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
