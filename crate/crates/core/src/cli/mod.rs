//! Command-line interface: reproducible runs from a single TOML config.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{report_error, run, Cli};
pub use config::{RunConfig, System};
