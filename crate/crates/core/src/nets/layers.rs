use ndarray::ArrayD;
use rand::{Rng, RngCore};
use vclab_autodiff::nn::{batch_norm, dropout, glu};
use vclab_autodiff::{conv, Bound, ConvOptions, ParamId, ParamStore, Real, Var};

use crate::error::{Result, VclabError};

/// Kernel, stride and padding of one convolution, in 1D or 2D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Spec {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub rank: usize,
}

impl Spec {
    pub const fn d1(k: usize, s: usize, p: usize) -> Self {
        Spec { kernel: [k, 0], stride: [s, 0], pad: [p, 0], rank: 1 }
    }

    pub const fn d2(k: [usize; 2], s: [usize; 2], p: [usize; 2]) -> Self {
        Spec { kernel: k, stride: s, pad: p, rank: 2 }
    }

    fn options(&self, transposed: bool) -> ConvOptions {
        let r = self.rank;
        ConvOptions::new(r).stride(&self.stride[..r]).padding(&self.pad[..r]).transposed(transposed)
    }

    fn kernel(&self) -> &[usize] {
        &self.kernel[..self.rank]
    }
}

fn uniform_init<T: Real>(rng: &mut dyn RngCore, shape: &[usize], fan_in: usize) -> ArrayD<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    ArrayD::from_shape_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    opts: ConvOptions,
    rank: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        cin: usize,
        cout: usize,
        spec: Spec,
        transposed: bool,
        with_bias: bool,
    ) -> Self {
        let mut shape = if transposed { vec![cin, cout] } else { vec![cout, cin] };
        shape.extend_from_slice(spec.kernel());
        let fan_in = cin * spec.kernel().iter().product::<usize>();
        let weight = store.add(format!("{name}.weight"), uniform_init(rng, &shape, fan_in));
        let bias = with_bias.then(|| {
            let mut bshape = vec![1, cout];
            bshape.extend(std::iter::repeat_n(1, spec.rank));
            store.add(format!("{name}.bias"), ArrayD::zeros(bshape))
        });
        Conv { weight, bias, opts: spec.options(transposed), rank: spec.rank }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        debug_assert_eq!(x.shape().len(), self.rank + 2);
        let y = conv(x, p[self.weight], &self.opts)?;
        Ok(match self.bias {
            Some(b) => y + p[b],
            None => y,
        })
    }
}

/// Convolution, batch normalization and GLU. The convolution produces twice
/// the block's output channels; GLU halves them again.
#[derive(Clone, Debug)]
pub(crate) struct GluBlock {
    conv: Conv,
    scale: ParamId,
    shift: ParamId,
    reduce_axes: Vec<usize>,
}

impl GluBlock {
    /// `height` is the output height of a 2D block (normalization is per
    /// channel and per height); ignored in 1D.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        cin: usize,
        cout: usize,
        spec: Spec,
        transposed: bool,
        height: usize,
    ) -> Self {
        let conv = Conv::new(store, rng, name, cin, 2 * cout, spec, transposed, false);
        let (shape, reduce_axes) = if spec.rank == 1 {
            (vec![1, 2 * cout, 1], vec![0, 2])
        } else {
            (vec![1, 2 * cout, height, 1], vec![0, 3])
        };
        let scale = store.add(format!("{name}.bn.scale"), ArrayD::ones(shape.clone()));
        let shift = store.add(format!("{name}.bn.shift"), ArrayD::zeros(shape));
        GluBlock { conv, scale, shift, reduce_axes }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv.forward(p, x)?;
        let h = batch_norm(h, p[self.scale], p[self.shift], &self.reduce_axes)?;
        Ok(glu(h, 1)?)
    }
}

/// Appends a `(B, K)` conditioning matrix to `x` along channels, repeated
/// over every spatial axis.
pub(crate) fn append<'t, T: Real>(x: Var<'t, T>, cond: Option<Var<'t, T>>) -> Var<'t, T> {
    let Some(c) = cond else { return x };
    let xs = x.shape();
    let cs = c.shape();
    let mut shape = vec![cs[0], cs[1]];
    shape.extend(std::iter::repeat_n(1, xs.len() - 2));
    let mut full = xs.clone();
    full[1] = cs[1];
    let c = c.reshape(&shape).broadcast_to(&full);
    Var::concat(&[x, c], 1)
}

/// Applies dropout when a training RNG is supplied.
pub(crate) fn maybe_dropout<'t, T: Real>(x: Var<'t, T>, p: f64, rng: &mut Option<&mut dyn RngCore>) -> Var<'t, T> {
    match rng {
        Some(r) if p > 0.0 => dropout(x, p, *r),
        _ => x,
    }
}

/// One-hot rows for 0-based `labels`.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<ArrayD<T>> {
    let mut out = ArrayD::zeros(vec![labels.len(), classes]);
    for (b, &k) in labels.iter().enumerate() {
        if k >= classes {
            return Err(VclabError::DomainOutOfRange { index: k, count: classes });
        }
        out[[b, k]] = T::one();
    }
    Ok(out)
}

pub(crate) fn check_conditioning<T: Real>(cond: Option<Var<'_, T>>, expected: usize, batch: usize) -> Result<()> {
    match (cond, expected) {
        (None, 0) => Ok(()),
        (None, _) => Err(VclabError::Invalid("conditional network needs a domain index".into())),
        (Some(_), 0) => Err(VclabError::Invalid("network is not conditional".into())),
        (Some(c), k) if c.shape() != [batch, k] => {
            Err(VclabError::Shape(format!("conditioning shape {:?}, expected [{batch}, {k}]", c.shape())))
        }
        _ => Ok(()),
    }
}
