//! Command implementations behind the `satsynth` binary.

pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod generate;
pub mod serve;
pub mod train;

pub use config::RunConfig;
pub use error::CliError;
