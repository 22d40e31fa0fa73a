//! Command-line harness around `svgen-core`: configuration files,
//! checkpoints, metrics and media formats, and the training and evaluation
//! pipelines.

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
