use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{ArrayD, Axis, IxDyn, Slice};

use crate::real::Real;
use crate::tape::{Op, Var};

/// Shapes accepted by the binary operators: equal rank with each dimension
/// either equal or 1, or one side zero-dimensional.
fn check_broadcast(op: &str, a: &[usize], b: &[usize]) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    let ok = a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| x == y || x == 1 || y == 1);
    assert!(ok, "{op}: incompatible shapes {a:?} and {b:?}");
}

pub(crate) fn sum_to_array<T: Real>(a: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if shape.is_empty() {
        return ArrayD::from_elem(vec![], a.sum());
    }
    assert_eq!(a.ndim(), shape.len(), "sum_to: rank mismatch {:?} -> {shape:?}", a.shape());
    let mut cur = a.to_owned();
    for (ax, &dim) in shape.iter().enumerate() {
        if dim == 1 && cur.shape()[ax] != 1 {
            cur = cur.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        } else {
            assert_eq!(cur.shape()[ax], dim, "sum_to: cannot reduce axis {ax}");
        }
    }
    cur
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident, $name:literal, $sym:tt) => {
        impl<'t, T: Real> $trait for Var<'t, T> {
            type Output = Var<'t, T>;

            fn $method(self, rhs: Var<'t, T>) -> Var<'t, T> {
                let (a, b) = (self.value(), rhs.value());
                check_broadcast($name, a.shape(), b.shape());
                let out = &*a $sym &*b;
                self.tape.push($name, out, Op::$variant(self.id, rhs.id))
            }
        }
    };
}

binary_op!(Add, add, Add, "add", +);
binary_op!(Sub, sub, Sub, "sub", -);
binary_op!(Mul, mul, Mul, "mul", *);
binary_op!(Div, div, Div, "div", /);

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Var<'t, T>;

    fn neg(self) -> Var<'t, T> {
        let out = self.value().mapv(|v| -v);
        self.tape.push("neg", out, Op::Neg(self.id))
    }
}

impl<'t, T: Real> Var<'t, T> {
    fn map(self, name: &'static str, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let out = self.value().mapv(f);
        self.tape.push(name, out, op)
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        self.scale_by(T::lit(c))
    }

    pub fn scale_by(self, c: T) -> Var<'t, T> {
        self.map("scale", Op::Scale(self.id, c), |v| v * c)
    }

    pub fn offset(self, c: f64) -> Var<'t, T> {
        let c = T::lit(c);
        self.map("offset", Op::Offset(self.id), |v| v + c)
    }

    /// `1 - self`.
    pub fn one_minus(self) -> Var<'t, T> {
        (-self).offset(1.0)
    }

    pub fn square(self) -> Var<'t, T> {
        self * self
    }

    pub fn exp(self) -> Var<'t, T> {
        self.map("exp", Op::Exp(self.id), T::exp)
    }

    pub fn ln(self) -> Var<'t, T> {
        self.map("log", Op::Log(self.id), T::ln)
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.map("sigmoid", Op::Sigmoid(self.id), |v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    /// Square root. The derivative at 0 is taken to be 0.
    pub fn sqrt(self) -> Var<'t, T> {
        self.map("sqrt", Op::Sqrt(self.id), T::sqrt)
    }

    /// Absolute value with subgradient 0 at the origin.
    pub fn abs(self) -> Var<'t, T> {
        self.map("abs", Op::Abs(self.id), T::abs)
    }

    pub fn powf(self, p: T) -> Var<'t, T> {
        self.map("powf", Op::Powf(self.id, p), |v| v.powf(p))
    }

    /// `1/x`, with 0 mapped to 0.
    pub fn safe_recip(self) -> Var<'t, T> {
        self.map("safe_recip", Op::SafeRecip(self.id), |v| {
            if v == T::zero() {
                T::zero()
            } else {
                T::one() / v
            }
        })
    }

    /// Clamps values into `[lo, hi]` while passing gradients through unchanged.
    /// Returns the clamped variable and the number of clamped elements.
    pub fn clamp_pass_through(self, lo: f64, hi: f64) -> (Var<'t, T>, usize) {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        let v = self.value();
        let clamped = v.iter().filter(|&&x| x < lo || x > hi).count();
        let out = v.mapv(|x| x.max(lo).min(hi));
        (self.tape.push("clamp", out, Op::PassThrough(self.id)), clamped)
    }

    /// Sums over the axes where `shape` has 1 (or everything when `shape` is
    /// empty). Inverse of [`broadcast_to`](Self::broadcast_to).
    pub fn sum_to(self, shape: &[usize]) -> Var<'t, T> {
        if self.shape() == shape {
            return self;
        }
        let out = sum_to_array(&self.value(), shape);
        self.tape.push("sum_to", out, Op::SumTo(self.id))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Var<'t, T> {
        if self.shape() == shape {
            return self;
        }
        let v = self.value();
        let out = v
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("broadcast_to: {:?} -> {shape:?}", v.shape()))
            .to_owned();
        self.tape.push("broadcast_to", out, Op::BroadcastTo(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        if self.shape() == shape {
            return self;
        }
        let v = self.value();
        let out = ArrayD::from_shape_vec(IxDyn(shape), v.iter().copied().collect())
            .unwrap_or_else(|_| panic!("reshape: {:?} -> {shape:?}", v.shape()));
        self.tape.push("reshape", out, Op::Reshape(self.id))
    }

    /// Sum of all elements, as a zero-dimensional tensor.
    pub fn sum(self) -> Var<'t, T> {
        self.sum_to(&[])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(self, axes: &[usize]) -> Var<'t, T> {
        let mut shape = self.shape();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Var<'t, T> {
        let shape = self.shape();
        let n: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes).scale(1.0 / n as f64)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t, T> {
        if start == 0 && self.shape()[axis] == len {
            return self;
        }
        let out = self.value().slice_axis(Axis(axis), Slice::from(start..start + len)).to_owned();
        self.tape.push("narrow", out, Op::Narrow { input: self.id, axis, start })
    }

    /// Places `self` at `start` along `axis` inside zeros of length `full`.
    pub fn embed(self, axis: usize, start: usize, full: usize) -> Var<'t, T> {
        let v = self.value();
        let len = v.shape()[axis];
        if start == 0 && len == full {
            return self;
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = full;
        let mut out = ArrayD::zeros(shape);
        out.slice_axis_mut(Axis(axis), Slice::from(start..start + len)).assign(&*v);
        self.tape.push("embed", out, Op::Embed { input: self.id, axis, start, len })
    }

    /// Concatenation along `axis`. Panics on an empty list.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Var<'t, T> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        if parts.len() == 1 {
            return parts[0];
        }
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views)
            .unwrap_or_else(|e| panic!("concat along axis {axis}: {e}"));
        tape.push("concat", out, Op::Concat { inputs: parts.iter().map(|p| p.id).collect(), axis })
    }

    /// Per-slice maximum along `axis` (kept), as a constant.
    pub fn max_axis_constant(self, axis: usize) -> Var<'t, T> {
        let v = self.value();
        let out = v
            .fold_axis(Axis(axis), T::neg_infinity(), |&m, &x| m.max(x))
            .insert_axis(Axis(axis));
        self.tape.constant(out)
    }

    /// `log(sum(exp(self)))` along `axis`, kept as size 1.
    pub fn logsumexp(self, axis: usize) -> Var<'t, T> {
        let m = self.max_axis_constant(axis);
        (self - m).exp().sum_axes(&[axis]).ln() + m
    }

    pub fn log_softmax(self, axis: usize) -> Var<'t, T> {
        self - self.logsumexp(axis)
    }

    pub fn softmax(self, axis: usize) -> Var<'t, T> {
        self.log_softmax(axis).exp()
    }

    /// `log(sigmoid(self))`, stable for large magnitudes.
    pub fn log_sigmoid(self) -> Var<'t, T> {
        // log σ(z) = -(max(-z, 0) + log(1 + exp(-|z|)))
        let a = self.abs();
        let relu_neg = (a - self).scale(0.5);
        -(relu_neg + (-a).exp().offset(1.0).ln())
    }

    /// `log(1 - exp(self))` for `self < 0`.
    pub fn log1m_exp(self) -> Var<'t, T> {
        self.exp().one_minus().ln()
    }

    /// Elementwise product with a fixed mask, used for dropout.
    pub fn mask(self, mask: ArrayD<T>) -> Var<'t, T> {
        self * self.tape.constant(mask)
    }
}
