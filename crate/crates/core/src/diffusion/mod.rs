//! Denoising diffusion engine: schedule, denoiser, training, ancestral
//! sampling with classifier-free and external-scorer guidance, and color
//! matching.

mod checkpoint;
mod color;
mod config;
mod guidance;
mod model;
pub mod nn;
mod sampler;
mod schedule;
mod trainer;
mod unet;

use thiserror::Error;

pub use checkpoint::{append_metric, Checkpoint, CheckpointHeader, TrainMetric, FORMAT_VERSION};
pub use color::{color_match, ColorMatch};
pub use config::DiffusionConfig;
pub use guidance::{GradientScorer, GuidanceHook, TargetColorScorer};
pub use model::{AdamConfig, ClassEmbeddingTable, Conditioning, ModelState, PreparedExample, TrainExample};
pub use sampler::{posterior_mean, reverse_process, sample, KnownRegion, SampleOptions};
pub use schedule::{NoiseSchedule, ScheduleKind, LINEAR_BETA_END, LINEAR_BETA_START};
pub use trainer::{train, TrainOptions};
pub use unet::UNet;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid diffusion config: {0}")]
    Config(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {step} out of range for a {steps}-step schedule")]
    StepOutOfRange { step: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown class id {id} ({known} classes known)")]
    UnknownClass { id: usize, known: usize },
    #[error("conditioning: {0}")]
    Conditioning(String),
    #[error("empty training batch")]
    EmptyBatch,
    #[error("guidance: {0}")]
    Guidance(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
