//! Define-by-run reverse-mode differentiation.
//!
//! Every primitive applied through a [`Tape`] appends one node holding its
//! output value and the ids of its inputs, so the node list is the
//! computation record in topological order. [`Tape::backward`] walks it in
//! reverse and accumulates gradients for every node that depends on a
//! variable created with [`Tape::variable`].

mod backward;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) use ops::normalize_row;
pub use ops::MASS_FLOOR;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    SharedLeftMatMul {
        a: Var,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Relu(Var),
    Abs(Var),
    SoftmaxLast(Var),
    Reshape(Var),
    MeanMiddle {
        x: Var,
        outer: usize,
        middle: usize,
        inner: usize,
    },
    ConcatLast(Vec<Var>),
    Maximum(Var, Var),
    SumAll(Var),
    SumPerRow(Var),
    NormalizeMass(Var),
    CrossEntropy {
        logits: Var,
        classes: Vec<usize>,
        probs: Vec<f64>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of applied primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that gradients are tracked for.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input ids of every recorded node, in record order.
    pub fn record(&self) -> Vec<(usize, Vec<usize>)> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (i, n.op.inputs().iter().map(|v| v.0).collect()))
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Gradients of a scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.value(loss);
        if value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contribution) in backward::propagate(self, node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(self.nodes[i].op, Op::Leaf))
                    .map(|data| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            tracked: self
                .nodes
                .iter()
                .map(|n| n.requires_grad && matches!(n.op, Op::Leaf))
                .collect(),
        })
    }
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddBias(a, b) | Op::Maximum(a, b) => vec![*a, *b],
            Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::SharedLeftMatMul { a, x } => vec![*a, *x],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::SoftmaxLast(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::SumPerRow(a)
            | Op::NormalizeMass(a) => vec![*a],
            Op::MeanMiddle { x, .. } => vec![*x],
            Op::ConcatLast(parts) => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Conv2d { x, w, b } => vec![*x, *w, *b],
            Op::MaxPool2 { x, .. } => vec![*x],
            Op::Gather { table, .. } => vec![*table],
        }
    }
}

/// Gradients of one backward pass, keyed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    tracked: Vec<bool>,
}

impl Gradients {
    /// Gradient of a tracked leaf, `None` for constants and interior nodes.
    /// Tracked leaves the loss does not reach get zeros.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        if !self.tracked.get(v.0).copied().unwrap_or(false) {
            return None;
        }
        Some(
            self.grads
                .get(v.0)
                .cloned()
                .flatten()
                .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0])),
        )
    }
}
