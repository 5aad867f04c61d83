//! Configured end-to-end runs and the per-stage commands behind the CLI.

mod config;
pub mod output;
mod run;

pub use config::{InputPaths, RunConfig, DEFAULT_OUTPUT_DIR, MIN_PERMUTATIONS, OUTPUT_DIR_ENV};
pub use run::*;
