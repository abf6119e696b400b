//! Command-line pipeline around the `cmr_phase` library: configuration,
//! stage orchestration, on-disk artifacts and plots.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use commands::{run, Cli};
pub use error::{CliError, Kind};
