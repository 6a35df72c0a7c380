//! Diffusion over flattened field weights: noise schedule, token layout,
//! transformer denoiser, training, DDIM sampling and de-duplication.

mod checkpoint;
mod layout;
mod model;
mod sample;
mod schedule;
mod train;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use checkpoint::{
    load_model, load_optimizer, read_model, read_optimizer, save_model, save_optimizer,
    write_model, write_optimizer,
};
pub use layout::TokenLayout;
pub use model::{timestep_embedding, DenoiserConfig, Normalization, TransformerDenoiser};
pub use sample::{ddim_sample, ddim_step, dedupe, initial_noise, Denoise, Sample};
pub use schedule::{forward_diffuse, NoiseSchedule, ScheduleConfig};
pub use train::{loss_csv, train, DiffusionTrainConfig, DiffusionTrainer, EpochLoss};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("weight vectors {offenders:?} do not have length {expected}")]
    MixedLengths {
        expected: usize,
        offenders: Vec<usize>,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("not a diffusion checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
