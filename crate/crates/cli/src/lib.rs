//! Experiment runner: configuration, checkpoints, metric logs and image grids.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsutil;
pub mod metrics_log;
pub mod pgm;

pub use error::{CliError, Result};
