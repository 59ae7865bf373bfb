//! Bit-exact checkpoints: a JSON header followed by raw little-endian `f64`
//! parameter values and Adam moments.

use std::fs;
use std::path::Path;

use misac_core::{Adam, AdamConfig, ArchConfig, FusionModel, HasParams, HeadKind, InputLayout, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};
use crate::report::RunMetrics;
use crate::task::TaskSpec;
use crate::training::{TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MISACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// What produced a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    /// Hash of the experiment configuration.
    pub config_hash: String,
    /// Hash of the dataset the run trained on.
    pub dataset_hash: String,
    pub model: ModelSpec,
    pub arch: ArchConfig,
    pub task: TaskSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model_kind: String,
    run: RunInfo,
    layout: InputLayout,
    head: HeadKind,
    adam: AdamConfig,
    adam_step: u64,
    tensors: Vec<TensorMeta>,
    metrics: RunMetrics,
}

pub fn encode_checkpoint(run: &RunInfo, state: &TrainState) -> Result<Vec<u8>> {
    let params = state.model.params();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model_kind: state.model.kind_name(),
        run: run.clone(),
        layout: state.model.layout().clone(),
        head: state.model.head_kind(),
        adam: state.optimizer.config,
        adam_step: state.optimizer.step_count,
        tensors: params.iter().map(|(name, t)| TensorMeta { name: name.to_string(), shape: t.shape().to_vec() }).collect(),
        metrics: state.metrics.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 20 + 24 * params.scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let values = params.tensors().iter().flat_map(|t| t.values().iter());
    let moments = state.optimizer.first_moment.iter().chain(&state.optimizer.second_moment).flatten();
    for x in values.chain(moments) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(RunInfo, TrainState)> {
    let bad = |msg: &str| TaskError::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TaskError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;

    // Initialization values are overwritten below; the rng only fixes shapes.
    let mut model = header.run.model.build::<f64, _>(header.layout.clone(), &header.run.arch, header.head, &mut ChaCha8Rng::seed_from_u64(0))?;
    let layout_ok = model.params().len() == header.tensors.len()
        && model.params().iter().zip(&header.tensors).all(|((n, t), m)| n == m.name && t.shape() == m.shape.as_slice());
    if !layout_ok {
        return Err(bad("parameter layout does not match the model description"));
    }
    let count = model.params().scalar_count();
    let payload = &bytes[20 + len..];
    if payload.len() != 3 * count * 8 {
        return Err(TaskError::Checkpoint(format!("expected {} payload bytes, found {}", 3 * count * 8, payload.len())));
    }
    let mut floats = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in model.params_mut().tensors_mut() {
        t.values_mut().iter_mut().for_each(|v| *v = floats.next().unwrap());
    }
    let mut optimizer = Adam::new(header.adam, model.params());
    optimizer.step_count = header.adam_step;
    for m in optimizer.first_moment.iter_mut().chain(optimizer.second_moment.iter_mut()) {
        m.iter_mut().for_each(|v| *v = floats.next().unwrap());
    }
    Ok((header.run, TrainState { model, optimizer, metrics: header.metrics }))
}

/// Write atomically via a sibling temporary file.
pub fn save_checkpoint(path: &Path, run: &RunInfo, state: &TrainState) -> Result<()> {
    let bytes = encode_checkpoint(run, state)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RunInfo, TrainState)> {
    decode_checkpoint(&fs::read(path)?)
}
