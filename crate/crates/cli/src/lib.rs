//! Command-line front end for the `ici` library.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{dispatch, Cli};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
