//! Command-line front end for the `cmpglm` models: run configuration, CSV
//! ingestion and the `fit`, `predict`, `coverage` and `diagnose` commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, Result};
