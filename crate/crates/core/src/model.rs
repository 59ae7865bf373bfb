//! Configuration-level model selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::baselines::{BaselineKind, BaselineModel};
use crate::error::Result;
use crate::fusion::{ArchConfig, ForwardPass, FusionModel, HeadKind};
use crate::gradcheck::HasParams;
use crate::modality::{InputLayout, Modality, ModelInput};
use crate::moe::{MoeModel, Routing, DEFAULT_EPSILON};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    MoeDense,
    MoeSparse {
        active: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Concat,
    StaticWeighted {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Unimodal {
        modality: Modality,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl ModelSpec {
    pub fn build<T: Scalar, R: Rng>(&self, layout: InputLayout, arch: &ArchConfig, head: HeadKind, rng: &mut R) -> Result<AnyModel<T>> {
        let mut baseline = |kind| BaselineModel::new(layout.clone(), arch, kind, head, rng).map(AnyModel::Baseline);
        match self {
            ModelSpec::MoeDense => MoeModel::new(layout.clone(), arch, Routing::Dense, head, rng).map(AnyModel::Moe),
            ModelSpec::MoeSparse { active, epsilon } => {
                let routing = Routing::Sparse { active: *active, epsilon: *epsilon };
                MoeModel::new(layout.clone(), arch, routing, head, rng).map(AnyModel::Moe)
            }
            ModelSpec::Concat => baseline(BaselineKind::Concat),
            ModelSpec::StaticWeighted { weights } => baseline(BaselineKind::StaticWeighted { weights: weights.clone() }),
            ModelSpec::Unimodal { modality } => baseline(BaselineKind::Unimodal { modality: *modality }),
        }
    }

    /// Modalities the model reads, given the task's candidates.
    pub fn modalities(&self, task_modalities: &[Modality]) -> Vec<Modality> {
        match self {
            ModelSpec::Unimodal { modality } => vec![*modality],
            _ => task_modalities.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<T> {
    Moe(MoeModel<T>),
    Baseline(BaselineModel<T>),
}

impl<T: Scalar> AnyModel<T> {
    pub fn cast<U: Scalar>(&self) -> AnyModel<U> {
        match self {
            AnyModel::Moe(m) => AnyModel::Moe(m.cast()),
            AnyModel::Baseline(m) => AnyModel::Baseline(m.cast()),
        }
    }
}

impl<T: Scalar> HasParams<T> for AnyModel<T> {
    fn params(&self) -> &ParamStore<T> {
        match self {
            AnyModel::Moe(m) => m.params(),
            AnyModel::Baseline(m) => m.params(),
        }
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            AnyModel::Moe(m) => m.params_mut(),
            AnyModel::Baseline(m) => m.params_mut(),
        }
    }
}

impl<T: Scalar> FusionModel<T> for AnyModel<T> {
    fn layout(&self) -> &InputLayout {
        match self {
            AnyModel::Moe(m) => m.layout(),
            AnyModel::Baseline(m) => m.layout(),
        }
    }
    fn head_kind(&self) -> HeadKind {
        match self {
            AnyModel::Moe(m) => m.head_kind(),
            AnyModel::Baseline(m) => m.head_kind(),
        }
    }
    fn forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<ForwardPass<T>> {
        match self {
            AnyModel::Moe(m) => m.forward(tape, input),
            AnyModel::Baseline(m) => m.forward(tape, input),
        }
    }
    fn kind_name(&self) -> String {
        match self {
            AnyModel::Moe(m) => m.kind_name(),
            AnyModel::Baseline(m) => m.kind_name(),
        }
    }
}
