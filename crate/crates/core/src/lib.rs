//! Learning core: a small define-by-run autodiff engine, the Adam optimizer
//! and the multimodal mixture-of-experts fusion models built on top of them.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! element type to `f64`, which is what training uses. [`DoubleDouble`] is a
//! third scalar for high-precision finite-difference oracles.

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod optim;
pub mod modality;
pub mod nn;
pub mod fusion;
pub mod moe;
pub mod baselines;
pub mod ddouble;
pub mod model;

pub use autodiff::{Gradients, Route, Tape, Var};
pub use error::{CoreError, Result};
pub use ddouble::DoubleDouble;
pub use gradcheck::{finite_difference_check, finite_difference_check_with_oracle, GradCheckReport, HasParams};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use modality::{InputGroup, InputLayout, Modality, ModelInput};
pub use fusion::{ArchConfig, ForwardPass, FusionModel, HeadKind};
pub use moe::{GateBatch, GateControl, GateDecision, MoeModel, Routing};
pub use baselines::{BaselineKind, BaselineModel};
pub use model::{AnyModel, ModelSpec};

pub type RealTensor = Tensor<f64>;
pub type RealTensor32 = Tensor<f32>;
pub type ComputationTape = Tape<f64>;
pub type AdamState = Adam<f64>;
pub type MoEModel = MoeModel<f64>;
pub type Baseline = BaselineModel<f64>;
pub type Model = AnyModel<f64>;
