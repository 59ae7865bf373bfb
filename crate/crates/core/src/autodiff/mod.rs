//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Node
//! operands always precede the node, so [`Tape::backward`] is a single sweep
//! over the nodes in reverse recording order. Tapes are rebuilt per forward
//! pass; parameters are copied in with [`Tape::param`] and their gradients are
//! written back with [`Gradients::accumulate_into`].

mod backward;
mod ops;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use backward::Gradients;
pub use ops::Route;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    ScalarLhs,
    ScalarRhs,
    RowLhs,
    RowRhs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
        bcast: Broadcast,
    },
    Scale {
        a: usize,
        c: T,
    },
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Softmax {
        a: usize,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<(usize, usize)>,
        rows: usize,
    },
    Renormalize {
        w: usize,
        mask: Vec<bool>,
        denom: Vec<T>,
        cols: usize,
    },
    RoutedMix {
        weights: usize,
        cols: usize,
        width: usize,
        routes: Vec<ops::RouteRec>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
        per_sample: Vec<T>,
    },
    Mse {
        pred: usize,
        target: Vec<T>,
        per_sample: Vec<T>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, requires_grad, op });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    pub(crate) fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(CoreError::Tape("variable belongs to a different tape".into()));
        }
        self.nodes
            .get(v.idx)
            .ok_or_else(|| CoreError::Tape(format!("variable {} not recorded on this tape", v.idx)))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: &[usize], values: Vec<T>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    /// Free leaf, optionally tracked for gradients.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        let shape = t.shape().to_vec();
        let values = t.values().to_vec();
        Ok(self.push(shape, values, requires_grad, Op::Leaf { param: None }))
    }

    pub fn tensor(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), t.requires_grad, Op::Leaf { param: None })
    }

    /// Copy a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape().to_vec(), t.values().to_vec(), t.requires_grad, Op::Leaf { param: Some(id) })
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[self.checked(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.checked(v)].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.checked(v)].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    /// Per-sample losses recorded by a loss node, if `v` is one.
    pub fn per_sample_losses(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[self.checked(v)].op {
            Op::CrossEntropy { per_sample, .. } | Op::Mse { per_sample, .. } => Some(per_sample),
            _ => None,
        }
    }

    fn checked(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }
}
