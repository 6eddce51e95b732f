//! Pipeline orchestration for the `tilefuse` binary: split raw data,
//! ingest or simulate per-tile detections, fuse, evaluate, and report
//! per-stage wall-clock timings.

pub mod pipeline;

pub use pipeline::{run_pipeline, PipelineConfig, PipelineReport, StageTimings};
