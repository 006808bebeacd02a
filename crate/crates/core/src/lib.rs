//! Synthetic and partially manipulated overhead imagery: tile ingestion,
//! a conditioned diffusion engine, mask generation, generation recipes,
//! dataset assembly and a forensic evaluation harness.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! single-precision types used by the CLI and service.

pub mod bench;
pub mod dataset;
pub mod diffusion;
pub mod image;
pub mod ingest;
pub mod maskgen;
pub mod pipelines;
pub mod scalar;

pub use scalar::Scalar;

pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type ModelState32 = diffusion::ModelState<f32>;
pub type ModelState64 = diffusion::ModelState<f64>;
pub type Schedule32 = diffusion::NoiseSchedule<f32>;
pub type Schedule64 = diffusion::NoiseSchedule<f64>;
pub type Checkpoint32 = diffusion::Checkpoint<f32>;
