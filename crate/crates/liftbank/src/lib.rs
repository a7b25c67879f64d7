//! File formats, configuration and the command-line driver around
//! `liftbank-core`.

pub mod checkpoint;
pub mod checks;
pub mod commands;
pub mod config;
mod error;
pub mod exec;
pub mod manifest;
pub mod report;
pub mod wav;

pub use error::CliError;
