//! Configuration, orchestration and file output for the `kmwave` binary.

pub mod config;
pub mod error;
pub mod run;
pub mod verify;

pub use config::{parse_config, Command, RunConfig};
pub use error::{CliError, CliResult};
pub use run::{run, RunReport};
