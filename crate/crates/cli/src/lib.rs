//! Experiment tooling around the simulator core: the TOML config schema,
//! the metrics CSV format, and the runner that drives a full
//! (algorithm x seed) grid and writes its manifest.

pub mod config;
pub mod experiment;
pub mod metrics;
