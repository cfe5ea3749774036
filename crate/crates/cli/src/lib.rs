//! Configuration, commands and output for the `thermofew` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

pub use commands::{run, Command, Outcome};
pub use config::{parse_config, to_toml, RunConfig};
pub use error::{CliError, CliResult};
