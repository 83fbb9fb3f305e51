//! Configuration files, run orchestration, output files and the command line.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{build_setup, cli_dispatch, run_config, RunReport};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use output::{emit_outputs, Manifest, Summary};
