//! Experiment harness around `calm-core`: configuration, binary artifact
//! formats, the staged pipeline, ablation sweeps and reports.

pub mod ablation;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use error::{BenchError, Result};
