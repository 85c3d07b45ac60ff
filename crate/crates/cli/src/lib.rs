//! Command-line front end for the `prts` key-rate engine.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
