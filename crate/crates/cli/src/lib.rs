//! Experiment commands: preprocess, train, evaluate, sweep, ablate and
//! simreport, driven by a flat key-value config.

pub mod commands;
pub mod config;

pub use config::{ExperimentConfig, Precision};
