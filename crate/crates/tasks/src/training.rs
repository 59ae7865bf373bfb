//! Minibatch Adam training and evaluation.

use std::collections::BTreeMap;

use misac_chansim::{dft_codebook, Dataset, ScenarioConfig};
use misac_core::{
    Adam, AdamConfig, AnyModel, ArchConfig, BaselineKind, CoreError, FusionModel, HasParams, Modality, ModelSpec, Tape,
};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};
use crate::metrics::{argmax_rows, mean_euclidean_error, mean_squared_distance, nmse_db, sum_rate_ratio, topk_accuracy};
use crate::report::{EpochMetrics, RunMetrics};
use crate::task::{InputTable, LossKind, TaskKind, TaskSpec, Targets};

/// Rows per forward pass during evaluation. Evaluation is pure, so this only
/// affects speed.
const EVAL_CHUNK: usize = 512;

const INIT_STREAM: u64 = 0x696e_6974;
const SHUFFLE_STREAM_BASE: u64 = 0x7368_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Must match the dataset's split fraction.
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 64, learning_rate: 1e-3, train_fraction: 0.7, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(TaskError::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if self.batch_size == 0 {
            return Err(TaskError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TaskError::Config(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Build a freshly initialized model for `task` on `dataset`.
pub fn build_model(spec: &ModelSpec, arch: &ArchConfig, task: &TaskSpec, dataset: &Dataset, seed: u64) -> Result<AnyModel<f64>> {
    build_model_for(spec, arch, task, dataset.config(), seed)
}

/// [`build_model`] from the scenario alone, without generating data.
pub fn build_model_for(spec: &ModelSpec, arch: &ArchConfig, task: &TaskSpec, scenario: &ScenarioConfig, seed: u64) -> Result<AnyModel<f64>> {
    task.validate()?;
    arch.validate()?;
    let modalities = spec.modalities(&task.input_modalities());
    let layout = misac_core::InputLayout::new(&modalities, task.window_slots())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    Ok(spec.build(layout, arch, task.head(scenario), &mut rng)?)
}

/// Dataset views a model needs during training and evaluation.
pub struct TaskData<'a> {
    pub dataset: &'a Dataset,
    pub task: TaskSpec,
    pub inputs: InputTable,
    pub targets: Targets,
    codebook: Vec<Vec<Complex64>>,
}

impl<'a> TaskData<'a> {
    pub fn new(dataset: &'a Dataset, task: &TaskSpec, model: &AnyModel<f64>) -> Result<Self> {
        task.validate()?;
        let expected = task.head(dataset.config());
        if model.head_kind() != expected {
            return Err(TaskError::Config(format!("model head {:?} does not fit task head {expected:?}", model.head_kind())));
        }
        let inputs = InputTable::new(dataset, model.layout(), task.window_slots())?;
        let c = dataset.config();
        let codebook = dft_codebook(c.antennas, c.codebook_size, c.spacing(), c.wavelength())?;
        Ok(Self { dataset, task: task.clone(), inputs, targets: Targets::of(dataset, task), codebook })
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.dataset.manifest.split.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.dataset.manifest.split.test
    }
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: AnyModel<f64>,
    pub optimizer: Adam<f64>,
    pub metrics: RunMetrics,
}

impl TrainState {
    pub fn new(model: AnyModel<f64>, config: &TrainConfig, task: &TaskSpec, config_hash: impl Into<String>) -> Self {
        let optimizer = Adam::new(config.adam(), model.params());
        let metrics = RunMetrics::new(config_hash, model.kind_name(), task.metric_name());
        Self { model, optimizer, metrics }
    }

    /// Completed epochs; 0 before and right after the initial evaluation.
    pub fn epochs_done(&self) -> usize {
        self.metrics.last().map_or(0, |r| r.epoch)
    }
}

/// Returned by the per-epoch hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Model outputs and loss over a set of slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub outputs: Vec<f64>,
    pub width: usize,
    pub gate_mass: Option<[f64; Modality::COUNT]>,
    /// Per-row modality mass (MoE only).
    pub row_mass: Option<Vec<[f64; Modality::COUNT]>>,
    pub expert_activations: Vec<u64>,
    pub expert_evaluations: usize,
}

fn loss_on(tape: &mut Tape<f64>, task: &TaskSpec, targets: &Targets, output: misac_core::Var, idx: &[usize]) -> Result<misac_core::Var> {
    Ok(match task.loss() {
        LossKind::CrossEntropy => tape.cross_entropy(output, &targets.classes(idx))?,
        LossKind::Mse => tape.mse(output, &targets.values(idx))?,
    })
}

fn static_mass(model: &AnyModel<f64>) -> Option<[f64; Modality::COUNT]> {
    let AnyModel::Baseline(b) = model else { return None };
    let mut mass = [0.0; Modality::COUNT];
    match b.kind() {
        BaselineKind::Concat => return None,
        BaselineKind::Unimodal { modality } => mass[modality.index()] = 1.0,
        BaselineKind::StaticWeighted { .. } => {
            for ((m, _), w) in b.layout().groups.iter().zip(b.static_weights()) {
                mass[m.index()] = *w;
            }
        }
    }
    Some(mass)
}

/// Forward `idx` in fixed-size chunks, in order.
pub fn evaluate(model: &AnyModel<f64>, data: &TaskData<'_>, idx: &[usize]) -> Result<Evaluation> {
    let width = model.head_kind().output_width();
    let mut outputs = Vec::with_capacity(idx.len() * width);
    let mut loss_sum = 0.0;
    let mut rows_mass: Option<Vec<[f64; Modality::COUNT]>> = None;
    let mut activations: Vec<u64> = Vec::new();
    let mut evaluations = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let input = data.inputs.batch(chunk)?;
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, &input)?;
        outputs.extend_from_slice(tape.value(pass.output));
        let loss = loss_on(&mut tape, &data.task, &data.targets, pass.output, chunk)?;
        loss_sum += tape.per_sample_losses(loss).expect("loss node").iter().sum::<f64>();
        if let Some(m) = pass.modality_mass {
            rows_mass.get_or_insert_with(Vec::new).extend(m);
        }
        if activations.is_empty() {
            activations = vec![0; pass.expert_rows.len()];
        }
        activations.iter_mut().zip(&pass.expert_rows).for_each(|(a, &r)| *a += r as u64);
        evaluations += pass.expert_evaluations;
    }
    let n = idx.len().max(1) as f64;
    let gate_mass = match &rows_mass {
        Some(rows) => {
            let mut mean = [0.0; Modality::COUNT];
            for r in rows {
                mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= n);
            Some(mean)
        }
        None => static_mass(model),
    };
    Ok(Evaluation {
        loss: loss_sum / n,
        outputs,
        width,
        gate_mass,
        row_mass: rows_mass,
        expert_activations: activations,
        expert_evaluations: evaluations,
    })
}

/// Task metric and secondary metrics of `eval` over the slots `idx`.
pub fn task_metrics(data: &TaskData<'_>, eval: &Evaluation, idx: &[usize]) -> Result<(f64, BTreeMap<String, f64>)> {
    let records = &data.dataset.records;
    let norm = &data.dataset.manifest.normalization;
    let mut secondary = BTreeMap::new();
    let metric = match data.task.kind {
        TaskKind::BeamPrediction => {
            let labels = data.targets.classes(idx);
            let classes = eval.width;
            let top1 = topk_accuracy(&eval.outputs, classes, &labels, 1)?;
            secondary.insert("top3_accuracy".into(), topk_accuracy(&eval.outputs, classes, &labels, 3.min(classes))?);
            let predicted = argmax_rows(&eval.outputs, classes);
            let mut ratio = 0.0;
            for ((&i, &p), &l) in idx.iter().zip(&predicted).zip(&labels) {
                ratio += sum_rate_ratio(&records[i].channel, &data.codebook, p, l, data.dataset.config())?;
            }
            secondary.insert("sum_rate_ratio".into(), ratio / idx.len().max(1) as f64);
            top1
        }
        TaskKind::PathlossRegression => {
            let preds: Vec<f64> = eval.outputs.iter().flat_map(|&z| norm.path_loss_db.denormalize(&[z])).collect();
            let truth: Vec<f64> = idx.iter().map(|&i| records[i].path_loss_db).collect();
            let mse = preds.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len().max(1) as f64;
            secondary.insert("rmse_db".into(), mse.sqrt());
            nmse_db(&preds, &truth)?
        }
        TaskKind::ChannelRegression => {
            let preds: Vec<f64> = eval.outputs.chunks(eval.width).flat_map(|z| norm.channel.denormalize(z)).collect();
            let truth: Vec<f64> = idx.iter().flat_map(|&i| records[i].channel_reals()).collect();
            nmse_db(&preds, &truth)?
        }
        TaskKind::TrajectoryTracking => {
            let preds: Vec<f64> = eval.outputs.chunks(3).flat_map(|z| norm.position.denormalize(z)).collect();
            let truth: Vec<f64> = idx.iter().flat_map(|&i| records[i].position).collect();
            secondary.insert("mse_m2".into(), mean_squared_distance(&preds, &truth));
            mean_euclidean_error(&preds, &truth)?
        }
    };
    Ok((metric, secondary))
}

/// Windowed cumulative squared position error: for each test slot `t ≥ L`,
/// `Σ_{τ=t-L}^{t} ‖p̂(τ) − p(τ)‖²`, averaged.
pub fn window_cumulative_mse(model: &AnyModel<f64>, data: &TaskData<'_>) -> Result<f64> {
    let all: Vec<usize> = (0..data.dataset.len()).collect();
    let eval = evaluate(model, data, &all)?;
    let norm = &data.dataset.manifest.normalization;
    let sq: Vec<f64> = eval
        .outputs
        .chunks(3)
        .zip(&data.dataset.records)
        .map(|(z, r)| {
            let p = norm.position.denormalize(z);
            (0..3).map(|i| (p[i] - r.position[i]).powi(2)).sum()
        })
        .collect();
    let l = data.task.window;
    let windows: Vec<f64> = data.test_indices().iter().filter(|&&t| t >= l).map(|&t| sq[t - l..=t].iter().sum()).collect();
    Ok(windows.iter().sum::<f64>() / windows.len().max(1) as f64)
}

/// Metrics row for the current model: training-set loss, test metric,
/// test gate mass and expert activations.
pub fn evaluation_row(state: &TrainState, data: &TaskData<'_>, epoch: usize) -> Result<EpochMetrics> {
    let train = evaluate(&state.model, data, data.train_indices())?;
    let test = evaluate(&state.model, data, data.test_indices())?;
    let (metric_value, secondary) = task_metrics(data, &test, data.test_indices())?;
    Ok(EpochMetrics {
        epoch,
        train_loss: train.loss,
        metric_value,
        gate_mass: test.gate_mass,
        expert_activations: if matches!(state.model, AnyModel::Moe(_)) { test.expert_activations } else { Vec::new() },
        secondary,
    })
}

fn numeric_abort(err: TaskError, epoch: usize, batch: usize, model: &AnyModel<f64>) -> TaskError {
    match err {
        TaskError::Core(CoreError::Numeric(detail)) => {
            TaskError::NonFinite { epoch, batch, param_norm: model.params().value_norm(), detail }
        }
        other => other,
    }
}

/// The shuffled training order for `epoch` (1-based).
pub fn epoch_order(train: &[usize], config: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order = train.to_vec();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SHUFFLE_STREAM_BASE + epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Train `state` up to `config.epochs`, appending one metrics row per epoch
/// (plus the initial evaluation as epoch 0 on a fresh state). `hook` runs
/// after every row and may stop the run early.
pub fn train(
    data: &TaskData<'_>,
    state: &mut TrainState,
    config: &TrainConfig,
    hook: &mut dyn FnMut(&TrainState) -> Result<Flow>,
) -> Result<()> {
    config.validate()?;
    if (config.train_fraction - data.dataset.manifest.train_fraction).abs() > 0.0 {
        return Err(TaskError::Config(format!(
            "train_fraction {} differs from the dataset split {}",
            config.train_fraction, data.dataset.manifest.train_fraction
        )));
    }
    if state.metrics.rows.is_empty() {
        let row = evaluation_row(state, data, 0).map_err(|e| numeric_abort(e, 0, 0, &state.model))?;
        state.metrics.rows.push(row);
        if hook(state)? == Flow::Stop {
            return Ok(());
        }
    }
    for epoch in state.epochs_done() + 1..=config.epochs {
        let order = epoch_order(data.train_indices(), config, epoch);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let input = data.inputs.batch(idx)?;
            let model = &mut state.model;
            model.params_mut().zero_grad();
            let mut tape = Tape::new();
            let step = (|| -> Result<()> {
                let pass = model.forward(&mut tape, &input)?;
                let loss = loss_on(&mut tape, &data.task, &data.targets, pass.output, idx)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(TaskError::Core(CoreError::Numeric(format!("batch loss is {value}"))));
                }
                model.backward(&tape, loss)?;
                Ok(())
            })();
            step.map_err(|e| numeric_abort(e, epoch, batch, &state.model))?;
            state.optimizer.step(state.model.params_mut())?;
            state.model.params_mut().zero_grad();
        }
        let row = evaluation_row(state, data, epoch).map_err(|e| numeric_abort(e, epoch, order.len().div_ceil(config.batch_size), &state.model))?;
        if !row.train_loss.is_finite() {
            return Err(TaskError::NonFinite {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                param_norm: state.model.params().value_norm(),
                detail: format!("training-set loss is {}", row.train_loss),
            });
        }
        state.metrics.rows.push(row);
        if hook(state)? == Flow::Stop {
            return Ok(());
        }
    }
    Ok(())
}

/// Build, train and evaluate in one call.
pub fn run_training(
    dataset: &Dataset,
    task: &TaskSpec,
    model: AnyModel<f64>,
    config: &TrainConfig,
    config_hash: &str,
) -> Result<TrainState> {
    let data = TaskData::new(dataset, task, &model)?;
    let mut state = TrainState::new(model, config, task, config_hash);
    train(&data, &mut state, config, &mut |_| Ok(Flow::Continue))?;
    Ok(state)
}
