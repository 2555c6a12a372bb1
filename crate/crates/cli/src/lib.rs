//! Command-line front end for the `dissom` library.

pub mod commands;
pub mod config;
pub mod error;

pub use error::CliError;
