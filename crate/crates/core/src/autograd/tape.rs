use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise unary functions with a closed-form derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    Neg,
    Abs,
    Cos,
    Sin,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Gelu,
    /// Derivative of `Gelu`; only recorded while building higher-order graphs.
    GeluGrad,
}

impl Unary {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Abs => "abs",
            Unary::Cos => "cos",
            Unary::Sin => "sin",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Sqrt => "sqrt",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Gelu => "gelu",
            Unary::GeluGrad => "gelu_grad",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Unary(usize, Unary),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Narrow { x: usize, axis: usize, start: usize },
    Embed { x: usize, axis: usize, start: usize },
    Concat(Vec<usize>, usize),
    SumAll(usize),
    ExpandAll(usize),
    SumAxis(usize, usize),
    ExpandAxis(usize, usize),
    ReduceTo(usize, usize),
    BroadcastAlong(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, eps: f64 },
    Conv2d { x: usize, w: usize, stride: usize, pad: usize },
    ConvInputGrad { g: usize, w: usize, stride: usize, pad: usize },
    ConvWeightGrad { x: usize, g: usize, stride: usize, pad: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Unary(_, u) => u.name(),
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Narrow { .. } => "narrow",
            Op::Embed { .. } => "embed",
            Op::Concat(..) => "concat",
            Op::SumAll(..) => "sum",
            Op::ExpandAll(..) => "expand",
            Op::SumAxis(..) => "sum_axis",
            Op::ExpandAxis(..) => "expand_axis",
            Op::ReduceTo(..) => "reduce_to",
            Op::BroadcastAlong(..) => "broadcast_along",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvInputGrad { .. } => "conv_transpose2d",
            Op::ConvWeightGrad { .. } => "conv2d_weight_grad",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Unary(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::SumAll(a)
            | Op::ExpandAll(a)
            | Op::SumAxis(a, _)
            | Op::ExpandAxis(a, _)
            | Op::ReduceTo(a, _)
            | Op::BroadcastAlong(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a) => vec![*a],
            Op::Narrow { x, .. } | Op::Embed { x, .. } | Op::LayerNorm { x, .. } => vec![*x],
            Op::Concat(xs, _) => xs.clone(),
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::ConvInputGrad { g, w, .. } => vec![*g, *w],
            Op::ConvWeightGrad { x, g, .. } => vec![*x, *g],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Whether forward ops verify their outputs are finite.
///
/// On in debug builds; `PSL_DEBUG=1` turns it on in release builds too.
pub fn checks_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    cfg!(debug_assertions)
        || *FLAG.get_or_init(|| std::env::var("PSL_DEBUG").map(|v| v == "1").unwrap_or(false))
}

/// A Wengert list. Nodes are appended in evaluation order, so insertion order is a
/// topological order and the reverse pass is a single backwards sweep.
///
/// A tape is single-threaded; independent tapes may live on different threads.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    /// When false, new nodes are recorded as constants (used during first-order backward).
    pub(crate) recording: Cell<bool>,
    counting: Cell<bool>,
    flops: Cell<u64>,
    pub(crate) consumed: RefCell<HashSet<usize>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("flops", &self.flops())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
            counting: Cell::new(true),
            flops: Cell::new(0),
            consumed: RefCell::new(HashSet::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t, true)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Multiply-accumulate FLOPs (2 per MAC) recorded by forward ops since the last reset.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub fn reset_flops(&self) {
        self.flops.set(0);
    }

    pub(crate) fn add_macs(&self, macs: u64) {
        if self.counting.get() {
            self.flops.set(self.flops.get() + 2 * macs);
        }
    }

    pub(crate) fn set_counting(&self, on: bool) -> bool {
        self.counting.replace(on)
    }

    /// Allows another `backward` from losses that were already differentiated.
    pub fn reset_grads(&self) {
        self.consumed.borrow_mut().clear();
    }

    pub(crate) fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op) -> Result<Var<'_, T>> {
        if checks_enabled() && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.recording.get() && op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    /// Owned copy of the value.
    pub fn tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn item(&self) -> Result<T> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.tensor())
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands live on different tapes"))
        }
    }
}
