//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Node ids grow
//! monotonically and every node's parents have smaller ids, so walking the
//! tape backwards from the root is a valid reverse topological order.
//!
//! Broadcasting is limited to leading batch dimensions (`matmul` with a
//! shared operand, `add_bias` over the last axis); everything else demands
//! identical shapes.

mod backward;
mod ops;

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MulScalarVar(usize, usize),
    MatMul(MatMulSpec),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    SumAxis(usize, usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    L2Normalize {
        x: usize,
        norms: Vec<T>,
        eps: T,
    },
    Concat(Vec<usize>, usize),
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: usize,
        axis: usize,
        index: Vec<usize>,
    },
    InterpGather {
        seq: usize,
        pos: usize,
        periods: Vec<usize>,
    },
    Unfold1d {
        x: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Wrap(usize),
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct MatMulSpec {
    pub a: usize,
    pub b: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Number of stacked matrices in the output.
    pub batch: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Records operations for one forward pass. Single-threaded.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: receives a gradient on [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Backpropagates from a scalar `root`, returning gradients for every
    /// leaf that requires them. Contributions from multiple consumers of
    /// the same node are summed.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        let grads = backward::run(&nodes, root.id);
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros for unreached leaves.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Runs `f` on the node's value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn item(&self) -> T {
        self.with_value(|t| t.item())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
