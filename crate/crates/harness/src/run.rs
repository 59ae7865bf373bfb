//! Dataset generation, training runs with checkpoint/resume, and checkpoint
//! evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use misac_chansim::{generate_dataset, Dataset};
use misac_core::{AnyModel, HasParams};
use misac_tasks::{
    build_model, build_model_for, evaluate_gating_adaptivity, evaluation_row, format_sig9, load_checkpoint, save_checkpoint,
    train, AdaptivityRow, EpochMetrics, Flow, RunInfo, RunMetrics, TaskData, TrainState,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const EXPERIMENT_FILE: &str = "experiment.toml";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// Generate the experiment's dataset into `out` (default: its dataset
/// directory). Returns the directory and the dataset hash.
pub fn gen_data(config: &ExperimentConfig, out: Option<&Path>) -> Result<(PathBuf, String)> {
    let dir = out.map_or_else(|| config.dataset_dir(), Path::to_path_buf);
    let dataset = generate_dataset(&config.scenario, config.train.train_fraction)?;
    create_dir(&dir)?;
    dataset.write(&dir)?;
    Ok((dir, dataset.manifest.config_hash))
}

/// Read a dataset and check it belongs to `expected_hash`.
pub fn load_dataset(dir: &Path, expected_hash: &str) -> Result<Dataset> {
    if !dir.join(misac_chansim::dataset::MANIFEST_FILE).exists() {
        return Err(HarnessError::Runtime(format!("no dataset at {}; run `misac gen-data` first", dir.display())));
    }
    let dataset = Dataset::read(dir)?;
    if dataset.manifest.config_hash != expected_hash {
        return Err(HarnessError::HashMismatch {
            what: "dataset",
            expected: expected_hash.to_string(),
            found: dataset.manifest.config_hash.clone(),
        });
    }
    Ok(dataset)
}

/// Trainable parameter count of the configured model.
pub fn parameter_count(config: &ExperimentConfig) -> Result<usize> {
    let seed = config.seeds[0];
    let model = build_model_for(&config.model, &config.arch, &config.task, &config.scenario, seed)?;
    Ok(model.params().scalar_count())
}

/// Write the fully materialized configuration next to the run outputs.
pub fn write_experiment_file(config: &ExperimentConfig) -> Result<()> {
    create_dir(&config.output_dir)?;
    let text = format!("# config_hash = \"{}\"\n{}", config.config_hash(), config.to_toml());
    write_atomic(&config.output_dir.join(EXPERIMENT_FILE), text.as_bytes())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from an existing checkpoint of the same run.
    pub resume: bool,
    /// Stop once this many epochs are done, as if interrupted.
    pub stop_after: Option<usize>,
}

/// Train one seed. With `resume`, an existing checkpoint for the same run is
/// continued; a checkpoint from a different configuration is refused. The
/// metrics CSV and the checkpoint are rewritten after every epoch.
pub fn train_seed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    options: TrainOptions,
    progress: &mut dyn FnMut(u64, &EpochMetrics),
) -> Result<TrainState> {
    let info = config.run_info(seed);
    let train_config = config.train_config(seed);
    let dir = config.run_dir(seed);
    create_dir(&dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let csv = dir.join(METRICS_FILE);

    let mut state = if options.resume && ckpt.exists() {
        let (found, state) = load_checkpoint(&ckpt)?;
        if found.config_hash != info.config_hash || found != info {
            return Err(HarnessError::HashMismatch { what: "checkpoint", expected: info.config_hash, found: found.config_hash });
        }
        state
    } else {
        let model = build_model(&config.model, &config.arch, &config.task, dataset, seed)?;
        TrainState::new(model, &train_config, &config.task, info.config_hash.clone())
    };
    let data = TaskData::new(dataset, &config.task, &state.model)?;
    let mut io_error = None;
    train(&data, &mut state, &train_config, &mut |s| {
        let result = write_atomic(&csv, s.metrics.to_csv().as_bytes()).and_then(|_| save_checkpoint(&ckpt, &info, s).map_err(Into::into));
        if let Err(e) = result {
            io_error = Some(e);
            return Ok(Flow::Stop);
        }
        progress(seed, s.metrics.last().expect("row just written"));
        Ok(if options.stop_after.is_some_and(|k| s.epochs_done() >= k) { Flow::Stop } else { Flow::Continue })
    })?;
    match io_error {
        Some(e) => Err(e),
        None => Ok(state),
    }
}

/// A checkpoint evaluated on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub info: RunInfo,
    pub metrics: RunMetrics,
    pub adaptivity: Option<Vec<AdaptivityRow>>,
    pub test_samples: usize,
}

pub fn eval_checkpoint(checkpoint: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    let (info, state) = load_checkpoint(checkpoint)?;
    let dataset = load_dataset(dataset_dir, &info.dataset_hash)?;
    let data = TaskData::new(&dataset, &info.task, &state.model)?;
    let row = evaluation_row(&state, &data, state.epochs_done())?;
    let mut metrics = RunMetrics::new(&state.metrics.config_hash, &state.metrics.model_kind, &state.metrics.metric_name);
    metrics.rows.push(row);
    let adaptivity = match state.model {
        AnyModel::Moe(_) => Some(evaluate_gating_adaptivity(&state.model, &data, data.test_indices())?),
        AnyModel::Baseline(_) => None,
    };
    Ok(EvalReport { info, metrics, adaptivity, test_samples: data.test_indices().len() })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), format_sig9)
}

impl EvalReport {
    pub fn render(&self) -> String {
        let row = &self.metrics.rows[0];
        let mut out = String::new();
        out.push_str(self.metrics.to_csv().trim_end());
        out.push('\n');
        for (name, value) in &row.secondary {
            writeln!(out, "# {name} = {}", format_sig9(*value)).unwrap();
        }
        if let Some(rows) = &self.adaptivity {
            out.push_str("\nmodality,mass_clean,mass_corrupted,clean_slots,corrupted_slots\n");
            for r in rows {
                writeln!(out, "{},{},{},{},{}", r.modality, opt(r.clean), opt(r.corrupted), r.clean_slots, r.corrupted_slots).unwrap();
            }
        }
        if !row.expert_activations.is_empty() {
            let total: u64 = row.expert_activations.iter().sum();
            writeln!(out, "\nexpert,activations  (total {total} over {} test samples)", self.test_samples).unwrap();
            for (e, n) in row.expert_activations.iter().enumerate() {
                writeln!(out, "{e},{n}").unwrap();
            }
        }
        out
    }
}
