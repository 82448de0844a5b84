//! Experiment orchestration for `tagmt`: configuration files, corpus loading,
//! the staged pipeline with its run directory, and the staged grid search.

pub mod config;
pub mod corpus;
pub mod error;
pub mod fsio;
pub mod grid;
pub mod run;

pub use config::{parse_kv, CorpusSource, ExperimentConfig, SplitPaths, TagArm};
pub use error::{CliError, CliResult};
pub use grid::{grid_search, run_grid, GridOutcome, GridSpace, RankRow};
pub use run::{read_manifest_config, run_experiment, RunSummary};
