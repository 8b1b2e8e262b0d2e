//! The `hmt` command-line tool and HTTP inference service.

pub mod args;
pub mod commands;
pub mod error;
pub mod service;
pub mod wire;

pub use error::{CliError, CliResult, EXIT_INTERNAL, EXIT_OK, EXIT_USER};
