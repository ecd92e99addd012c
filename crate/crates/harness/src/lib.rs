//! Experiment harness for `glap-core`: configs, datasets, MAP training,
//! pipeline orchestration, result records and the `glap` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metric;
pub mod record;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_alpha_sweep, run_experiment, run_rank_study, run_shift_study, RunOptions, Stage};
pub use record::ResultsRecord;
