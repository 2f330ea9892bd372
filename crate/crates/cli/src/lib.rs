//! File formats, configuration and subcommands of the `far` tool.

pub mod app;
pub mod config;
pub mod pgm;
pub mod pts;

pub use app::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
