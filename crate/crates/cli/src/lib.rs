//! Library side of the `aot-lab` command line: config schemas, subcommands
//! and SVG output.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use config::Options;
pub use error::{CliError, Result};
