//! Composite layer operations. All of them are built from tape primitives,
//! so they are differentiable to any order.

use ndarray::ArrayD;
use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tape::Var;

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Batch normalization with statistics from the current batch.
///
/// Mean and (biased) variance are taken over `reduce_axes`; every remaining
/// index is one normalization group. `scale` and `shift` must broadcast
/// against the reduced shape, e.g. `(1, C, 1)` for per-channel 1D.
pub fn batch_norm<'t, T: Real>(
    x: Var<'t, T>,
    scale: Var<'t, T>,
    shift: Var<'t, T>,
    reduce_axes: &[usize],
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let group: usize = reduce_axes.iter().map(|&a| shape[a]).product();
    if group < 2 {
        return Err(AutodiffError::DegenerateBatch(shape));
    }
    let centered = x - x.mean_axes(reduce_axes);
    let var = centered.square().mean_axes(reduce_axes);
    let inv_std = var.offset(BATCH_NORM_EPS).sqrt().safe_recip();
    Ok(centered * inv_std * scale + shift)
}

/// Gated linear unit: first channel half times the sigmoid of the second.
pub fn glu<'t, T: Real>(x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    let c = x.shape()[axis];
    if !c.is_multiple_of(2) {
        return Err(AutodiffError::OddChannels(c));
    }
    let half = c / 2;
    Ok(x.narrow(axis, 0, half) * x.narrow(axis, half, half).sigmoid())
}

/// Inverted dropout: zeroes each element with probability `p` and rescales
/// survivors by `1/(1-p)`.
pub fn dropout<'t, T: Real, R: Rng + ?Sized>(x: Var<'t, T>, p: f64, rng: &mut R) -> Var<'t, T> {
    if p <= 0.0 {
        return x;
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask = ArrayD::from_shape_fn(x.shape(), |_| {
        if rng.random::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    });
    x.mask(mask)
}
