//! Experiment driver for the CF-ISAC toolkit: configuration, the
//! train/adapt/evaluate pipeline, sweeps, checkpoints and result files.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod stats;
pub mod sweep;

pub use config::{Baseline, ExperimentConfig, ExperimentSpec, SweepAxis};
pub use error::{HarnessError, Result};
