//! File formats, run configuration and subcommands for the `volmark`
//! command-line tool. The numerical work lives in `volmark-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::CliError;
