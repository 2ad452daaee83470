//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in execution order. Each recorded node
//! keeps its forward value and, when any input requires a gradient, a
//! vector-Jacobian-product closure. [`Tape::backward`] walks the nodes once in
//! reverse order and accumulates gradients into per-node buffers.
//!
//! Complex quantities never appear as a separate dtype: they are pairs of real
//! planes, so every gradient here is an ordinary real gradient.

mod gradcheck;
mod nn;
mod ops;
mod suite;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use gradcheck::{grad_check, grad_check_at, relative_error, GradCheckReport};
pub use nn::BatchStats;
pub use suite::{op_gradient_suite, op_names, OpCheck, OP_FD_STEP, OP_FD_TOL};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Vector-Jacobian product: receives the gradient of the node's output and
/// accumulates into its parents through the [`GradSink`].
pub type BackwardFn = Box<dyn Fn(&Tensor, &mut GradSink<'_>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    MulScalarVar,
    ComplexMul,
    Matmul,
    Linear,
    Conv2d,
    PointwiseConv,
    Fft,
    Ifft,
    Slice,
    Concat,
    Reshape,
    Permute,
    Sum,
    Mean,
    SumAxis,
    Elu,
    Sigmoid,
    Tanh,
    Log10,
    Square,
    Sqrt,
    Exp,
    BatchNorm,
    ChannelMul,
    ChannelAdd,
    CausalConv,
    SsmKernel,
    Istft,
}

impl OpKind {
    pub const ALL: &'static [OpKind] = &[
        OpKind::Leaf,
        OpKind::Constant,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::MulScalarVar,
        OpKind::ComplexMul,
        OpKind::Matmul,
        OpKind::Linear,
        OpKind::Conv2d,
        OpKind::PointwiseConv,
        OpKind::Fft,
        OpKind::Ifft,
        OpKind::Slice,
        OpKind::Concat,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::SumAxis,
        OpKind::Elu,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Log10,
        OpKind::Square,
        OpKind::Sqrt,
        OpKind::Exp,
        OpKind::BatchNorm,
        OpKind::ChannelMul,
        OpKind::ChannelAdd,
        OpKind::CausalConv,
        OpKind::SsmKernel,
        OpKind::Istft,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

struct Node {
    kind: OpKind,
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Tensor>],
    nodes: &'a [Node],
}

impl GradSink<'_> {
    pub fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Mutable gradient buffer of node `id`, zero-initialised on first use.
    /// `None` when the node does not require a gradient.
    pub fn get(&mut self, id: usize) -> Option<&mut Tensor> {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return None;
        }
        Some(self.grads[id].get_or_insert_with(|| Tensor::zeros(node.value.shape())))
    }

    pub fn add(&mut self, id: usize, g: &Tensor) {
        if let Some(buf) = self.get(id) {
            buf.axpy(1.0, g);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, kind: OpKind, value: Tensor, requires_grad: bool, backward: Option<BackwardFn>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { kind, value: Rc::new(value), requires_grad, backward });
        self.grads.borrow_mut().push(None);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Differentiable input (a parameter).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(OpKind::Leaf, value, true, None)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(OpKind::Constant, value, false, None)
    }

    /// Record an operation result computed outside the tape.
    ///
    /// The backward closure is only kept when some input requires a gradient.
    pub fn record<'t>(
        &'t self,
        kind: OpKind,
        inputs: &[Var<'t>],
        value: Tensor,
        backward: BackwardFn,
    ) -> Result<Var<'t>> {
        if let Some(v) = inputs.iter().find(|v| !std::ptr::eq(v.tape, self)) {
            return Err(Error::usage(format!("{kind} input Var#{} belongs to another tape", v.id)));
        }
        let requires = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(kind, value, requires, requires.then_some(backward)))
    }

    /// Kinds of all recorded nodes in execution order.
    pub fn kinds(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.kind).collect()
    }

    pub fn kind(&self, v: Var<'_>) -> OpKind {
        self.nodes.borrow()[v.id].kind
    }

    /// Gradient of the last `backward` call w.r.t. `v`; zeros if unreachable.
    pub fn grad(&self, v: Var<'_>) -> Tensor {
        let grads = self.grads.borrow();
        match &grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes.borrow()[v.id].value.shape()),
        }
    }

    /// Propagate from a scalar `loss`. Previous gradients are discarded.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::usage("loss belongs to another tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads = self.grads.borrow_mut();
        grads.iter_mut().for_each(|g| *g = None);
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mut sink = GradSink { grads: &mut grads[..], nodes: &nodes[..] };
            backward(&g, &mut sink);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(y.item(), 9.0);
        assert_eq!(tape.grad(x).item(), 6.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = x.sigmoid().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(y.item(), 0.5);
        assert_eq!(tape.grad(x).item(), 0.25);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = x.add(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).item(), 2.0);
    }

    #[test]
    fn unreachable_parameter_has_zero_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let p = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let y = x.square().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn mixed_tapes_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(x.add(y), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec((0..50).map(|i| (i as f64 * 0.3).sin()).collect()));
        let y = x.tanh().unwrap().square().unwrap().sum().unwrap();
        tape.backward(y).unwrap();
        let g1 = tape.grad(x);
        tape.backward(y).unwrap();
        let g2 = tape.grad(x);
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(4.0));
        let y = c.square().unwrap();
        assert!(!y.requires_grad());
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(c).item(), 0.0);
    }
}
