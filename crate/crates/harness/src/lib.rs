//! Experiment pipeline around `basiscal-core`: synthetic examples, TOML
//! configuration, result bundles and summary metrics.

pub mod config;
pub mod examples;
pub mod metrics;
pub mod pipeline;
