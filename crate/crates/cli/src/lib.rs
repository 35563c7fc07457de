//! File formats and commands around `scsc-core`: the tensor container,
//! run configuration, PGM export and the `scsc` subcommands.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod pgm;

pub use config::RunConfig;
pub use container::{DType, TensorContainer};
pub use error::{CliError, CliResult};
