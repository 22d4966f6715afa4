//! Command-line harness around `lca_core`: problem generation, LCA runs
//! graded against an oracle, optimality certificates and parameter sweeps.

pub mod cli;
pub mod config;
pub mod experiment;

pub use cli::{run, EXIT_CONFIG, EXIT_FAILED, EXIT_NUMERICS, EXIT_OK};
pub use config::RunConfig;
pub use experiment::{execute, Experiment, ExperimentReport};
