//! ISAC learning tasks on simulated datasets: input assembly, losses and
//! metrics, a deterministic resumable training loop, checkpoints, and the
//! gating-adaptivity analysis.

pub mod adaptivity;
pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod report;
pub mod task;
pub mod training;

pub use adaptivity::{evaluate_gating_adaptivity, AdaptivityRow};
pub use checkpoint::{load_checkpoint, save_checkpoint, RunInfo};
pub use error::{Result, TaskError};
pub use metrics::{cross_entropy_loss, mean_euclidean_error, mse_loss, nmse_db, sum_rate_ratio, topk_accuracy};
pub use report::{format_sig9, metric_higher_is_better, parse_csv, CsvRun, EpochMetrics, RunMetrics};
pub use task::{assemble_input, InputTable, LossKind, TaskKind, TaskSpec, Targets};
pub use training::{
    build_model, build_model_for, evaluate, evaluation_row, run_training, task_metrics, train, window_cumulative_mse, Evaluation, Flow, TaskData, TrainConfig,
    TrainState,
};
