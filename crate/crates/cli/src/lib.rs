//! Pipeline wiring for the `forge` binary: config, run manifest, stages and
//! the synthetic demo corpus.

pub mod config;
pub mod demo;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use manifest::Manifest;
pub use pipeline::{Run, Stage, StageFailure};
