//! Multimodal mixture of experts: per-modality expert pools, a gating network
//! over the whole pool, dense or top-N sparse fusion, and a prediction head.
//!
//! Sparse routing evaluates only the selected experts. The selection mask is
//! a constant on the tape, so backward differentiates the renormalization
//! exactly on the support and unselected experts receive no gradient
//! (the straight-through treatment of the top-N operator).

mod gate;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gate::{fuse, renormalize, topn_select, GateBatch, GateDecision, GatingNet};

use crate::autodiff::{Route, Tape, Var};
use crate::error::{CoreError, Result};
use crate::fusion::{modality_mass, ArchConfig, ExpertNet, ForwardPass, FusionModel, HeadKind, PredictionHead};
use crate::gradcheck::HasParams;
use crate::modality::{InputLayout, Modality, ModelInput};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Routing {
    Dense,
    Sparse {
        active: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// How the fusion weights are obtained for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum GateControl<'a, T> {
    /// Gating network plus the configured routing.
    Learned,
    /// Gating network, but with a caller-supplied `[rows, experts]` mask
    /// instead of top-N (used to check gradients with the mask held fixed).
    FrozenMask(&'a [bool]),
    /// Bypass gating: the same per-expert weights for every row. Experts with
    /// zero weight are not evaluated.
    Fixed(&'a [T]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel<T> {
    params: ParamStore<T>,
    layout: InputLayout,
    arch: ArchConfig,
    routing: Routing,
    experts: Vec<ExpertNet>,
    gating: GatingNet,
    head: PredictionHead,
}

impl<T: Scalar> MoeModel<T> {
    pub fn new<R: Rng>(layout: InputLayout, arch: &ArchConfig, routing: Routing, head: HeadKind, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let total = layout.groups.len() * arch.experts_per_modality;
        if let Routing::Sparse { active, epsilon } = routing {
            if active == 0 || active > total {
                return Err(CoreError::Parameter(format!("sparse routing needs 1 <= N <= {total}, got {active}")));
            }
            if !(epsilon > 0.0) {
                return Err(CoreError::Parameter(format!("epsilon must be positive, got {epsilon}")));
            }
        }
        if head.output_width() == 0 {
            return Err(CoreError::Parameter("head output width must be positive".into()));
        }
        let mut params = ParamStore::new();
        let mut experts = Vec::with_capacity(total);
        for &(m, width) in &layout.groups {
            for j in 0..arch.experts_per_modality {
                experts.push(ExpertNet::new(&mut params, &format!("expert.{m}.{j}"), m, width, arch, rng));
            }
        }
        let gating = GatingNet::new(&mut params, layout.total_width(), arch.gate_hidden, total, rng);
        let head = PredictionHead::new(&mut params, arch.z_dim, arch.h_head, head, rng);
        Ok(Self { params, layout, arch: arch.clone(), routing, experts, gating, head })
    }

    /// The same model in another element type.
    pub fn cast<U: Scalar>(&self) -> MoeModel<U> {
        MoeModel {
            params: self.params.cast(),
            layout: self.layout.clone(),
            arch: self.arch.clone(),
            routing: self.routing,
            experts: self.experts.clone(),
            gating: self.gating.clone(),
            head: self.head.clone(),
        }
    }

    pub fn routing(&self) -> Routing {
        self.routing
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn total_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn experts(&self) -> &[ExpertNet] {
        &self.experts
    }

    pub fn gating(&self) -> &GatingNet {
        &self.gating
    }

    pub fn head(&self) -> &PredictionHead {
        &self.head
    }

    /// Modality of each expert, in gating-output order.
    pub fn expert_modalities(&self) -> Vec<Modality> {
        self.experts.iter().map(|e| e.modality).collect()
    }

    /// Embedding of expert `e` for a `[rows, width]` input.
    pub fn expert_forward(&self, tape: &mut Tape<T>, e: usize, x: Var) -> Result<Var> {
        let expert = self.experts.get(e).ok_or_else(|| CoreError::Index(format!("expert {e} of {}", self.experts.len())))?;
        expert.forward(tape, &self.params, x)
    }

    /// Gating logits and softmax weights, `[batch, experts]` each.
    pub fn gate_forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<(Var, Var)> {
        input.check_layout(&self.layout)?;
        let x = tape.constant(&[input.batch, self.layout.total_width()], input.concat(&self.layout))?;
        let logits = self.gating.forward(tape, &self.params, x)?;
        let w = tape.softmax(logits)?;
        Ok((logits, w))
    }

    pub fn forward_with(&self, tape: &mut Tape<T>, input: &ModelInput<T>, control: GateControl<'_, T>) -> Result<ForwardPass<T>> {
        input.check_layout(&self.layout)?;
        let rows = input.batch;
        let total = self.experts.len();
        let eps = match self.routing {
            Routing::Sparse { epsilon, .. } => T::from_f64_lossy(epsilon),
            Routing::Dense => T::from_f64_lossy(DEFAULT_EPSILON),
        };

        let (fusion, gate, mask) = match control {
            GateControl::Fixed(weights) => {
                if weights.len() != total {
                    return Err(crate::error::shape_err!("{} fixed weights for {total} experts", weights.len()));
                }
                let matrix: Vec<T> = (0..rows).flat_map(|_| weights.iter().copied()).collect();
                let mask = matrix.iter().map(|&w| w != T::zero()).collect();
                (tape.constant(&[rows, total], matrix)?, None, mask)
            }
            GateControl::Learned | GateControl::FrozenMask(_) => {
                let (logits, w) = self.gate_forward(tape, input)?;
                let weights = tape.value(w).to_vec();
                let (fusion, mask) = match (control, self.routing) {
                    (GateControl::FrozenMask(m), _) => {
                        if m.len() != rows * total {
                            return Err(crate::error::shape_err!("mask of {} for {rows}x{total}", m.len()));
                        }
                        (tape.renormalize(w, m, eps)?, m.to_vec())
                    }
                    (_, Routing::Dense) => (w, vec![true; rows * total]),
                    (_, Routing::Sparse { active, .. }) => {
                        let mut mask = Vec::with_capacity(rows * total);
                        for row in weights.chunks(total) {
                            mask.extend(topn_select(row, active)?.1);
                        }
                        (tape.renormalize(w, &mask, eps)?, mask)
                    }
                };
                let gate = GateBatch {
                    rows,
                    experts: total,
                    logits: tape.value(logits).to_vec(),
                    weights,
                    renormalized: tape.value(fusion).to_vec(),
                    mask: mask.clone(),
                };
                (fusion, Some(gate), mask)
            }
        };

        let mut full_inputs: Vec<Option<Var>> = vec![None; Modality::COUNT];
        let mut routes = Vec::new();
        let mut expert_rows = vec![0; total];
        for (e, expert) in self.experts.iter().enumerate() {
            let selected: Vec<usize> = (0..rows).filter(|&r| mask[r * total + e]).collect();
            if selected.is_empty() {
                continue;
            }
            let m = expert.modality;
            let width = self.layout.width_of(m).expect("expert modality is in layout");
            let x = if selected.len() == rows {
                match full_inputs[m.index()] {
                    Some(v) => v,
                    None => {
                        let v = tape.constant(&[rows, width], input.group(m).expect("checked").values.clone())?;
                        full_inputs[m.index()] = Some(v);
                        v
                    }
                }
            } else {
                tape.constant(&[selected.len(), width], input.gather(m, &selected))?
            };
            let z = expert.forward(tape, &self.params, x)?;
            expert_rows[e] = selected.len();
            routes.push(Route { column: e, rows: selected, emb: z });
        }
        let fused = tape.routed_mix(fusion, &routes)?;
        let output = self.head.forward(tape, &self.params, fused)?;
        let mass = modality_mass(tape.value(fusion), &self.expert_modalities());
        Ok(ForwardPass {
            output,
            gate,
            modality_mass: Some(mass),
            expert_evaluations: expert_rows.iter().sum(),
            expert_rows,
        })
    }
}

impl<T: Scalar> HasParams<T> for MoeModel<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
}

impl<T: Scalar> FusionModel<T> for MoeModel<T> {
    fn layout(&self) -> &InputLayout {
        &self.layout
    }

    fn head_kind(&self) -> HeadKind {
        self.head.kind
    }

    fn forward(&self, tape: &mut Tape<T>, input: &ModelInput<T>) -> Result<ForwardPass<T>> {
        self.forward_with(tape, input, GateControl::Learned)
    }

    fn kind_name(&self) -> String {
        match self.routing {
            Routing::Dense => "moe_dense".into(),
            Routing::Sparse { active, .. } => format!("moe_sparse{active}"),
        }
    }
}

#[cfg(test)]
mod tests;
