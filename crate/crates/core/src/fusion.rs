//! What every fusion model (MoE or baseline) exposes to the training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{CoreError, Result};
use crate::gradcheck::HasParams;
use crate::modality::{InputLayout, Modality, ModelInput};
use crate::moe::GateBatch;
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Layer widths shared by the MoE and the baselines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub z_dim: usize,
    pub h_expert: usize,
    pub h_head: usize,
    pub gate_hidden: usize,
    pub experts_per_modality: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { z_dim: 32, h_expert: 64, h_head: 64, gate_hidden: 128, experts_per_modality: 3 }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("z_dim", self.z_dim),
            ("h_expert", self.h_expert),
            ("h_head", self.h_head),
            ("gate_hidden", self.gate_hidden),
            ("experts_per_modality", self.experts_per_modality),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(CoreError::Parameter(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HeadKind {
    /// Emits `classes` logits; softmax lives in the loss.
    Classification { classes: usize },
    /// Emits `outputs` raw reals.
    Regression { outputs: usize },
}

impl HeadKind {
    pub fn output_width(self) -> usize {
        match self {
            HeadKind::Classification { classes } => classes,
            HeadKind::Regression { outputs } => outputs,
        }
    }
}

/// One hidden layer plus the task output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub kind: HeadKind,
    pub mlp: Mlp,
}

impl PredictionHead {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, input: usize, hidden: usize, kind: HeadKind, rng: &mut R) -> Self {
        Self { kind, mlp: Mlp::new(store, "head", &[input, hidden, kind.output_width()], rng) }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, z: Var) -> Result<Var> {
        self.mlp.forward(tape, store, z)
    }
}

/// Modality-specific encoder: two relu hidden layers then a linear embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertNet {
    pub modality: Modality,
    pub mlp: Mlp,
}

impl ExpertNet {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, modality: Modality, input: usize, arch: &ArchConfig, rng: &mut R) -> Self {
        let dims = [input, arch.h_expert, arch.h_expert, arch.z_dim];
        Self { modality, mlp: Mlp::new(store, name, &dims, rng) }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.shape(x).last().copied().unwrap_or(0);
        if w != self.mlp.input_width() {
            return Err(crate::error::shape_err!("{} expert expects width {}, got {w}", self.modality, self.mlp.input_width()));
        }
        self.mlp.forward(tape, store, x)
    }
}

/// Result of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub output: Var,
    /// Gating record, for gated models.
    pub gate: Option<GateBatch<T>>,
    /// Per-sample fusion mass per canonical modality; `None` when the model
    /// has no fusion weights (concatenation).
    pub modality_mass: Option<Vec<[f64; Modality::COUNT]>>,
    /// Total expert/encoder evaluations (rows pushed through an expert).
    pub expert_evaluations: usize,
    /// Rows evaluated by each expert.
    pub expert_rows: Vec<usize>,
}

pub trait FusionModel<T: Scalar>: HasParams<T> {
    fn layout(&self) -> &InputLayout;
    fn head_kind(&self) -> HeadKind;
    fn forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<ForwardPass<T>>;
    /// Short identifier written into metrics and checkpoints.
    fn kind_name(&self) -> String;

    /// Backward from `loss` and accumulate into the parameter gradients.
    fn backward(&mut self, tape: &Tape<T>, loss: Var) -> Result<Gradients<T>> {
        let grads = tape.backward(loss)?;
        grads.accumulate_into(tape, self.params_mut());
        Ok(grads)
    }
}

/// Per-row modality mass from a `[rows, experts]` weight matrix.
pub(crate) fn modality_mass<T: Scalar>(weights: &[T], experts: &[Modality]) -> Vec<[f64; Modality::COUNT]> {
    let cols = experts.len();
    weights
        .chunks(cols)
        .map(|row| {
            let mut mass = [0.0; Modality::COUNT];
            for (w, m) in row.iter().zip(experts) {
                mass[m.index()] += w.to_f64_lossless();
            }
            mass
        })
        .collect()
}
