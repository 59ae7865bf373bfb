//! Experiment harness behind the `misac` command: configuration files,
//! dataset generation, multi-seed training with resume, evaluation, run
//! comparison, and the acceptance suites.

pub mod compare;
pub mod config;
pub mod directional;
pub mod error;
pub mod run;
pub mod selftest;

pub use compare::{compare, median, CompareRow, Comparison};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{eval_checkpoint, gen_data, load_dataset, parameter_count, train_seed, write_experiment_file, EvalReport, TrainOptions};
pub use selftest::CriterionResult;
