//! Configuration, orchestration and output for the `freq-unravel` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod validate;

pub use config::{parse_config, parse_config_with, Mode, Overrides, RunConfig};
pub use error::CliError;
pub use run::{run, RunOutcome};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "FREQ_UNRAVEL_WORKERS";
