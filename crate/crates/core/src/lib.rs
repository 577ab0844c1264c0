//! Adaptive tiling toolkit for small-object detection on constrained devices.
//!
//! The pipeline is detector-agnostic: images are split into overlapping square
//! tiles sized so that objects reach a target normalized area, a detector (real
//! or simulated) runs per tile, and per-tile predictions are fused back into one
//! global detection set before evaluation and cost estimation.
//!
//! Module map:
//! - [`geom`]: boxes, image dimensions, normalized areas and overlap measures
//! - [`tiling`]: tile sizing, overlapping grid planning, coordinate transforms
//! - [`detector`]: detections, simulated box/grid detectors, external predictions
//! - [`fusion`]: pseudo boxes, adjacency baseline, pairwise matching and clustering
//! - [`metrics`]: TP/FP/FN matching, precision/recall/F1, count MAE, soft-F1 loss
//! - [`dataset`]: annotation parsing, dataset loading, synthetic scenes, PPM crops
//! - [`costmodel`]: per-tile device profiles and per-image latency/energy
//! - [`pipeline`]: per-image composition of simulation, mapping and fusion

pub mod costmodel;
pub mod dataset;
pub mod detector;
mod error;
pub mod fusion;
pub mod geom;
pub mod metrics;
pub mod pipeline;
pub mod tiling;
mod rng;
mod unionfind;

pub use error::{Error, Result};
pub use geom::{BBox, ImageDims, Nba};

/// Version stamped into every file this crate writes.
pub const FORMAT_VERSION: u32 = 1;
