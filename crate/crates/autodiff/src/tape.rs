//! Define-by-run computation record.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. Reverse accumulation walks the nodes backwards. The vector-Jacobian
//! products are themselves written with `Var` operations, so running
//! [`Var::backward_with_graph`] leaves the gradients on the tape as ordinary
//! differentiable values (needed for gradient penalties).

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use ndarray::ArrayD;

use crate::conv::ConvGeometry;
use crate::error::{AutodiffError, Result};
use crate::real::Real;

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Abs(usize),
    Powf(usize, T),
    SafeRecip(usize),
    PassThrough(usize),
    SumTo(usize),
    BroadcastTo(usize),
    Reshape(usize),
    Narrow { input: usize, axis: usize, start: usize },
    Embed { input: usize, axis: usize, start: usize, len: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Conv { x: usize, w: usize, geom: ConvGeometry },
    ConvInputGrad { g: usize, w: usize, geom: ConvGeometry },
    ConvWeightGrad { x: usize, g: usize, geom: ConvGeometry },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | Offset(a) | Exp(a) | Log(a) | Sigmoid(a) | Sqrt(a) | Abs(a)
            | Powf(a, _) | SafeRecip(a) | PassThrough(a) | SumTo(a) | BroadcastTo(a)
            | Reshape(a) => vec![*a],
            Narrow { input, .. } | Embed { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            Conv { x, w, .. } => vec![*x, *w],
            ConvInputGrad { g, w, .. } => vec![*g, *w],
            ConvWeightGrad { x, g, .. } => vec![*x, *g],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Rc<ArrayD<T>>,
    pub(crate) op: Op<T>,
    pub(crate) tracked: bool,
}

/// Arena holding one forward/backward computation.
///
/// A tape is cheap to create and is meant to be dropped after each training
/// step. Values are never mutated after being recorded.
pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: Cell<bool>,
    nonfinite: RefCell<Option<String>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("grad_enabled", &self.grad_enabled.get())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: Cell::new(true),
            nonfinite: RefCell::new(None),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient will be accumulated by [`Var::backward`].
    pub fn var(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: ArrayD<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(ArrayD::from_elem(vec![], value))
    }

    fn leaf(&self, value: ArrayD<T>, tracked: bool) -> Var<'_, T> {
        self.record("leaf", value, Op::Leaf, tracked)
    }

    /// Reports the first operation that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.nonfinite.borrow().as_ref() {
            Some(op) => Err(AutodiffError::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    /// Runs `f` with recording of differentiable history switched off.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = self.grad_enabled.replace(false);
        let out = f();
        self.grad_enabled.set(prev);
        out
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<ArrayD<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    pub(crate) fn push(&self, name: &'static str, value: ArrayD<T>, op: Op<T>) -> Var<'_, T> {
        let tracked = self.grad_enabled.get() && op.inputs().iter().any(|&i| self.is_tracked(i));
        let op = if tracked { op } else { Op::Leaf };
        self.record(name, value, op, tracked)
    }

    fn record(&self, name: &'static str, value: ArrayD<T>, op: Op<T>, tracked: bool) -> Var<'_, T> {
        if !value.iter().all(|v| v.is_finite()) {
            let mut slot = self.nonfinite.borrow_mut();
            if slot.is_none() {
                *slot = Some(name.to_string());
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, tracked });
        Var { tape: self, id: nodes.len() - 1 }
    }
}

/// Handle to a recorded value. Copying a `Var` is free.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f64> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<ArrayD<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single element of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one element.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_tracked(self.id)
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant((*self.value()).clone())
    }

    /// Gradients of this scalar with respect to every tracked node.
    pub fn backward(&self) -> Result<Gradients<'t, T>> {
        self.backward_impl(false)
    }

    /// Like [`backward`](Self::backward) but records the gradient computation,
    /// so the returned gradients can themselves be differentiated.
    pub fn backward_with_graph(&self) -> Result<Gradients<'t, T>> {
        self.backward_impl(true)
    }

    fn backward_impl(&self, create_graph: bool) -> Result<Gradients<'t, T>> {
        let tape = self.tape;
        tape.check_finite()?;
        let shape = self.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        let n = self.id + 1;
        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; n];
        let prev = tape.grad_enabled.replace(create_graph && tape.grad_enabled.get());
        grads[self.id] = Some(tape.constant(ArrayD::from_elem(shape, T::one())));

        let result = (|| {
            for id in (0..n).rev() {
                let Some(g) = grads[id] else { continue };
                let (op, tracked) = {
                    let nodes = tape.nodes.borrow();
                    (nodes[id].op.clone(), nodes[id].tracked)
                };
                if !tracked || matches!(op, Op::Leaf) {
                    continue;
                }
                let out = Var { tape, id };
                for (input, contrib) in vjp(&op, out, g) {
                    if input >= id {
                        return Err(AutodiffError::Cycle(id));
                    }
                    if !tape.is_tracked(input) {
                        continue;
                    }
                    grads[input] = Some(match grads[input] {
                        Some(acc) => acc + contrib,
                        None => contrib,
                    });
                }
            }
            Ok(())
        })();
        tape.grad_enabled.set(prev);
        result?;
        tape.check_finite()?;
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass, indexed by the forward [`Var`]s.
pub struct Gradients<'t, T: Real> {
    grads: Vec<Option<Var<'t, T>>>,
}

impl<'t, T: Real> Gradients<'t, T> {
    /// Gradient as a (possibly differentiable) variable. `None` when the
    /// root does not depend on `v`.
    pub fn get(&self, v: Var<'t, T>) -> Option<Var<'t, T>> {
        self.grads.get(v.id).copied().flatten()
    }

    /// Gradient values, zeros when the root does not depend on `v`.
    pub fn value(&self, v: Var<'t, T>) -> ArrayD<T> {
        match self.get(v) {
            Some(g) => (*g.value()).clone(),
            None => ArrayD::zeros(v.shape()),
        }
    }
}

/// Vector-Jacobian products, expressed as tape operations on `g`.
fn vjp<'t, T: Real>(op: &Op<T>, out: Var<'t, T>, g: Var<'t, T>) -> Vec<(usize, Var<'t, T>)> {
    let tape = out.tape;
    let var = |id: usize| Var { tape, id };
    match *op {
        Op::Leaf => vec![],
        Op::Add(a, b) => {
            vec![(a, g.sum_to(&var(a).shape())), (b, g.sum_to(&var(b).shape()))]
        }
        Op::Sub(a, b) => {
            vec![(a, g.sum_to(&var(a).shape())), (b, (-g).sum_to(&var(b).shape()))]
        }
        Op::Mul(a, b) => {
            let (va, vb) = (var(a), var(b));
            vec![(a, (g * vb).sum_to(&va.shape())), (b, (g * va).sum_to(&vb.shape()))]
        }
        Op::Div(a, b) => {
            let (va, vb) = (var(a), var(b));
            vec![
                (a, (g / vb).sum_to(&va.shape())),
                (b, (-(g * out) / vb).sum_to(&vb.shape())),
            ]
        }
        Op::Neg(a) => vec![(a, -g)],
        Op::Scale(a, c) => vec![(a, g.scale_by(c))],
        Op::Offset(a) | Op::PassThrough(a) => vec![(a, g)],
        Op::Exp(a) => vec![(a, g * out)],
        Op::Log(a) => vec![(a, g / var(a))],
        Op::Sigmoid(a) => vec![(a, g * out * out.one_minus())],
        Op::Sqrt(a) => vec![(a, (g * out.safe_recip()).scale(0.5))],
        Op::Abs(a) => {
            let sign = var(a).value().mapv(|v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            });
            vec![(a, g * tape.constant(sign))]
        }
        Op::Powf(a, p) => {
            let va = var(a);
            vec![(a, g * va.powf(p - T::one()).scale_by(p))]
        }
        Op::SafeRecip(a) => vec![(a, -(g * out * out))],
        Op::SumTo(a) => vec![(a, g.broadcast_to(&var(a).shape()))],
        Op::BroadcastTo(a) => vec![(a, g.sum_to(&var(a).shape()))],
        Op::Reshape(a) => vec![(a, g.reshape(&var(a).shape()))],
        Op::Narrow { input, axis, start } => {
            let full = var(input).shape()[axis];
            vec![(input, g.embed(axis, start, full))]
        }
        Op::Embed { input, axis, start, len } => vec![(input, g.narrow(axis, start, len))],
        Op::Concat { ref inputs, axis } => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|&i| {
                    let len = var(i).shape()[axis];
                    let piece = g.narrow(axis, offset, len);
                    offset += len;
                    (i, piece)
                })
                .collect()
        }
        Op::Conv { x, w, ref geom } => vec![
            (x, crate::conv::conv_input_grad(g, var(w), geom)),
            (w, crate::conv::conv_weight_grad(var(x), g, geom)),
        ],
        Op::ConvInputGrad { g: gin, w, ref geom } => vec![
            (gin, crate::conv::conv_raw(g, var(w), geom)),
            (w, crate::conv::conv_weight_grad(g, var(gin), geom)),
        ],
        Op::ConvWeightGrad { x, g: gin, ref geom } => vec![
            (x, crate::conv::conv_input_grad(var(gin), g, geom)),
            (gin, crate::conv::conv_raw(var(x), g, geom)),
        ],
    }
}
