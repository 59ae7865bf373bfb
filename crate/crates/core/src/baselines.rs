//! Non-MoE fusion baselines. Each uses one encoder per modality with the same
//! shape as an [`ExpertNet`] and the same prediction head as the MoE.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Route, Tape, Var};
use crate::error::{CoreError, Result};
use crate::fusion::{modality_mass, ArchConfig, ExpertNet, ForwardPass, FusionModel, HeadKind, PredictionHead};
use crate::gradcheck::HasParams;
use crate::modality::{InputLayout, Modality, ModelInput};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineKind {
    /// Embeddings concatenated in canonical order.
    Concat,
    /// Fixed convex combination of embeddings. `None` means uniform.
    StaticWeighted {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// A single encoder on one modality.
    Unimodal { modality: Modality },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel<T> {
    params: ParamStore<T>,
    layout: InputLayout,
    kind: BaselineKind,
    encoders: Vec<ExpertNet>,
    static_weights: Vec<T>,
    head: PredictionHead,
}

impl<T: Scalar> BaselineModel<T> {
    /// For `Unimodal`, `layout` is narrowed to the configured modality.
    pub fn new<R: Rng>(layout: InputLayout, arch: &ArchConfig, kind: BaselineKind, head: HeadKind, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layout = match &kind {
            BaselineKind::Unimodal { modality } => {
                let w = layout
                    .width_of(*modality)
                    .ok_or_else(|| CoreError::Parameter(format!("unimodal {modality} is not among the input modalities")))?;
                InputLayout { groups: vec![(*modality, w)] }
            }
            _ => layout,
        };
        let d = layout.groups.len();
        let static_weights = match &kind {
            BaselineKind::StaticWeighted { weights: Some(w) } => {
                check_simplex(w, d)?;
                w.iter().map(|&x| T::from_f64_lossy(x)).collect()
            }
            _ => vec![T::one() / T::of_usize(d); d],
        };
        let mut params = ParamStore::new();
        let encoders = layout
            .groups
            .iter()
            .map(|&(m, width)| ExpertNet::new(&mut params, &format!("expert.{m}.0"), m, width, arch, rng))
            .collect();
        let head_in = match kind {
            BaselineKind::Concat => d * arch.z_dim,
            _ => arch.z_dim,
        };
        let head = PredictionHead::new(&mut params, head_in, arch.h_head, head, rng);
        Ok(Self { params, layout, kind, encoders, static_weights, head })
    }

    pub fn cast<U: Scalar>(&self) -> BaselineModel<U> {
        BaselineModel {
            params: self.params.cast(),
            layout: self.layout.clone(),
            kind: self.kind.clone(),
            encoders: self.encoders.clone(),
            static_weights: self.static_weights.iter().map(|w| U::from_f64_lossy(w.to_f64_lossless())).collect(),
            head: self.head.clone(),
        }
    }

    pub fn kind(&self) -> &BaselineKind {
        &self.kind
    }

    pub fn static_weights(&self) -> &[T] {
        &self.static_weights
    }

    pub fn encoders(&self) -> &[ExpertNet] {
        &self.encoders
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    fn embed(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<Vec<Var>> {
        self.encoders
            .iter()
            .map(|enc| {
                let g = input.group(enc.modality).expect("layout checked");
                let x = tape.constant(&[input.batch, g.width], g.values.clone())?;
                enc.forward(tape, &self.params, x)
            })
            .collect()
    }
}

fn check_simplex(w: &[f64], d: usize) -> Result<()> {
    if w.len() != d {
        return Err(CoreError::Parameter(format!("{} static weights for {d} modalities", w.len())));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(CoreError::Parameter(format!("static weights must be non-negative, got {w:?}")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(CoreError::Parameter(format!("static weights sum to {s}, expected 1")));
    }
    Ok(())
}

impl<T: Scalar> HasParams<T> for BaselineModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
}

impl<T: Scalar> FusionModel<T> for BaselineModel<T> {
    fn layout(&self) -> &InputLayout {
        &self.layout
    }

    fn head_kind(&self) -> HeadKind {
        self.head.kind
    }

    fn forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<ForwardPass<T>> {
        input.check_layout(&self.layout)?;
        let rows = input.batch;
        let d = self.encoders.len();
        let z = self.embed(tape, input)?;
        let modalities: Vec<Modality> = self.encoders.iter().map(|e| e.modality).collect();
        let (fused, mass) = match self.kind {
            BaselineKind::Concat => (tape.concat_cols(&z)?, None),
            _ => {
                let matrix: Vec<T> = (0..rows).flat_map(|_| self.static_weights.iter().copied()).collect();
                let mass = modality_mass(&matrix, &modalities);
                let w = tape.constant(&[rows, d], matrix)?;
                let all: Vec<usize> = (0..rows).collect();
                let routes: Vec<Route> = z.iter().enumerate().map(|(e, &emb)| Route { column: e, rows: all.clone(), emb }).collect();
                (tape.routed_mix(w, &routes)?, Some(mass))
            }
        };
        let output = self.head.forward(tape, &self.params, fused)?;
        Ok(ForwardPass {
            output,
            gate: None,
            modality_mass: mass,
            expert_evaluations: rows * d,
            expert_rows: vec![rows; d],
        })
    }

    fn kind_name(&self) -> String {
        match &self.kind {
            BaselineKind::Concat => "concat".into(),
            BaselineKind::StaticWeighted { .. } => "static_weighted".into(),
            BaselineKind::Unimodal { modality } => format!("unimodal_{modality}"),
        }
    }
}
