//! Configuration, orchestration and artifact bookkeeping behind the
//! `marketdyn` command.

pub mod config;
mod error;
pub mod manifest;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
pub use manifest::{Manifest, ARTIFACT_CLASSES};
pub use pipeline::{run_pipeline, Report};
