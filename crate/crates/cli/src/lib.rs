//! File formats, configuration and the replication harness behind the `edpm` binary.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod table;

pub use config::{load_config, Config, Policy};
pub use error::{CliError, Result};
