//! Config files and the pipelines behind each command-line subcommand.

mod config;
mod pipelines;

pub use config::*;
pub use pipelines::*;
