//! Files, configuration and the command-line front end for `segflow-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
