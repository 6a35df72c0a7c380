//! Pipeline driver: fit a corpus of occupancy fields, train a diffusion model
//! on their weights, sample and extract new shapes, and score them.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;

use thiserror::Error;

/// A problem with the user's inputs or configuration (exit code 1).
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub use commands::{cmd_eval, cmd_extract, cmd_fit, cmd_sample, cmd_train, pipeline};
pub use config::{Mode, PipelineConfig};
pub use manifest::RunManifest;
