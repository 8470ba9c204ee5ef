//! Pipeline harness around the `acppo` library: gait search, imitation
//! pretraining, constrained training, evaluation, quadruped transfer and
//! reporting, each reproducible from a config and a seed.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::{Cli, Command};
pub use config::{Profile, RunConfig};
pub use error::{CliError, CliResult};
