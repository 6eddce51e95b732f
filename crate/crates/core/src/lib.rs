//! Seamless whole-image instance maps from per-tile detections over very
//! large multi-band rasters.
//!
//! The pipeline: cut a raster into overlapping sliding-window tiles
//! ([`tiling`]), run a detector per tile (or simulate one, [`synth`]),
//! keep each detection only in the one tile whose *target area* contains
//! its box's top-left corner, translate the survivors to whole-image
//! coordinates ([`fusion`]), and score the result with instance AP50 and
//! binary mIoU ([`metrics`]).
//!
//! Score and box arithmetic is generic over [`Scalar`] (f32 or f64); the
//! aliases below pin the default f64 lane used by the CLI.

pub mod error;
pub mod fusion;
pub mod instances;
pub mod metrics;
pub mod naive;
pub mod raster;
pub mod scalar;
pub mod synth;
pub mod tiling;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for scores, boxes, and metrics.
pub type Real = f64;

pub type BBox = instances::BBox<Real>;
pub type Detection = instances::Detection<Real>;
pub type GlobalInstance = instances::GlobalInstance<Real>;
pub type InstanceSet = instances::InstanceSet<Real>;
pub type SoftNmsParams = fusion::SoftNmsParams<Real>;
pub type EvalReport = metrics::EvalReport<Real>;
pub type NoiseConfig = synth::NoiseConfig<Real>;
