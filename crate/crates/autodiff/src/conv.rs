//! 1D/2D cross-correlation and its transpose.
//!
//! Internally everything is 2D on `(batch, channel, height, width)` arrays; 1D
//! tensors are viewed with height 1. Three bilinear kernels close the set
//! under differentiation: the forward correlation, its adjoint with respect
//! to the input (which is also the transposed convolution layer), and its
//! adjoint with respect to the kernel.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn};

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tape::{Op, Var};

/// Index map shared by a correlation and its two adjoints. `input` is the
/// spatial size on the correlation's input side, `output` on its output side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub pad: [usize; 2],
    pub input: [usize; 2],
    pub output: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub transposed: bool,
}

impl ConvOptions {
    /// Stride 1, no padding, for a rank-1 or rank-2 convolution.
    pub fn new(rank: usize) -> Self {
        ConvOptions { stride: vec![1; rank], padding: vec![0; rank], transposed: false }
    }

    pub fn stride(mut self, stride: &[usize]) -> Self {
        self.stride = stride.to_vec();
        self
    }

    pub fn padding(mut self, padding: &[usize]) -> Self {
        self.padding = padding.to_vec();
        self
    }

    pub fn transposed(mut self, transposed: bool) -> Self {
        self.transposed = transposed;
        self
    }
}

/// Output length of a forward correlation.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = input + 2 * pad;
    (span >= kernel && stride > 0).then(|| (span - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn conv_transpose_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let len = (input.checked_sub(1)? * stride + kernel).checked_sub(2 * pad)?;
    (len > 0).then_some(len)
}

fn mismatch(detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: "conv", detail }
}

/// Convolution layer primitive.
///
/// * forward: `input (B, Cin, ..)`, `kernel (Cout, Cin, k..)` → `(B, Cout, ..)`
///   with size `floor((in + 2·pad − k)/stride) + 1`.
/// * transposed: `input (B, Cin, ..)`, `kernel (Cin, Cout, k..)` → `(B, Cout, ..)`
///   with size `(in − 1)·stride − 2·pad + k`.
///
/// The spatial rank (1 or 2) is taken from the kernel.
pub fn conv<'t, T: Real>(input: Var<'t, T>, kernel: Var<'t, T>, opts: &ConvOptions) -> Result<Var<'t, T>> {
    let ks = kernel.shape();
    let xs = input.shape();
    let rank = ks.len().checked_sub(2).filter(|r| *r == 1 || *r == 2);
    let Some(rank) = rank else {
        return Err(mismatch(format!("kernel must be 3D or 4D, got {ks:?}")));
    };
    if xs.len() != rank + 2 {
        return Err(mismatch(format!("input {xs:?} does not match rank-{rank} kernel {ks:?}")));
    }
    if opts.stride.len() != rank || opts.padding.len() != rank {
        return Err(mismatch(format!("stride/padding must have {rank} entries")));
    }
    let lift = |v: &[usize], fill: usize| if rank == 1 { [fill, v[0]] } else { [v[0], v[1]] };
    let kernel_hw = lift(&ks[2..], 1);
    let stride = lift(&opts.stride, 1);
    let pad = lift(&opts.padding, 0);
    let in_hw = lift(&xs[2..], 1);

    let (x4, w4) = if rank == 1 {
        (
            input.reshape(&[xs[0], xs[1], 1, xs[2]]),
            kernel.reshape(&[ks[0], ks[1], 1, ks[2]]),
        )
    } else {
        (input, kernel)
    };

    let out = if !opts.transposed {
        if xs[1] != ks[1] {
            return Err(mismatch(format!("input has {} channels, kernel expects {}", xs[1], ks[1])));
        }
        let mut output = [0; 2];
        for d in 0..2 {
            output[d] = conv_output_len(in_hw[d], kernel_hw[d], stride[d], pad[d])
                .ok_or_else(|| mismatch(format!("input {xs:?} too small for kernel {ks:?}")))?;
        }
        let geom = ConvGeometry { kernel: kernel_hw, stride, pad, input: in_hw, output };
        conv_raw(x4, w4, &geom)
    } else {
        if xs[1] != ks[0] {
            return Err(mismatch(format!(
                "transposed input has {} channels, kernel expects {}",
                xs[1], ks[0]
            )));
        }
        let mut full = [0; 2];
        for d in 0..2 {
            full[d] = conv_transpose_output_len(in_hw[d], kernel_hw[d], stride[d], pad[d])
                .ok_or_else(|| mismatch(format!("transposed output of {xs:?} would be empty")))?;
        }
        let geom = ConvGeometry { kernel: kernel_hw, stride, pad, input: full, output: in_hw };
        conv_input_grad(x4, w4, &geom)
    };

    Ok(if rank == 1 {
        let s = out.shape();
        out.reshape(&[s[0], s[1], s[3]])
    } else {
        out
    })
}

/// Range of output positions `o` for which `o·stride + k − pad` lands in `[0, len)`.
#[inline]
fn valid_range(k: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let k = k as isize;
    let (s, p, n) = (stride as isize, pad as isize, len as isize);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let hi = (n - 1 + p - k).div_euclid(s) + 1;
    let hi = hi.clamp(0, out_len as isize) as usize;
    (lo as usize, hi.max(lo as usize))
}

struct Dims {
    batch: usize,
    cin: usize,
    cout: usize,
}

fn for_each_tap(
    geom: &ConvGeometry,
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    // f(ky, kx, oy, iy, ox_lo, ox_hi)
    let [kh, kw] = geom.kernel;
    let [sh, sw] = geom.stride;
    let [ph, pw] = geom.pad;
    let [h, w] = geom.input;
    let [ho, wo] = geom.output;
    for ky in 0..kh {
        let (oy_lo, oy_hi) = valid_range(ky, sh, ph, h, ho);
        for kx in 0..kw {
            let (ox_lo, ox_hi) = valid_range(kx, sw, pw, w, wo);
            if ox_lo >= ox_hi {
                continue;
            }
            for oy in oy_lo..oy_hi {
                let iy = oy * sh + ky - ph;
                f(ky, kx, oy, iy, ox_lo, ox_hi);
            }
        }
    }
}

/// Unfolds `x` into a `(cin·kh·kw, batch·ho·wo)` matrix of receptive fields.
fn im2col<T: Real>(x: &[T], d: &Dims, geom: &ConvGeometry) -> Array2<T> {
    let [h, wd] = geom.input;
    let [ho, wo] = geom.output;
    let [kh, kw] = geom.kernel;
    let (sw, pw) = (geom.stride[1], geom.pad[1]);
    let ncols = d.batch * ho * wo;
    let mut cols = vec![T::zero(); d.cin * kh * kw * ncols];
    for b in 0..d.batch {
        for ci in 0..d.cin {
            let x_plane = &x[(b * d.cin + ci) * h * wd..][..h * wd];
            for_each_tap(geom, |ky, kx, oy, iy, lo, hi| {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * ncols + b * ho * wo + oy * wo..][..wo];
                let x_row = &x_plane[iy * wd..][..wd];
                for ox in lo..hi {
                    dst[ox] = x_row[ox * sw + kx - pw];
                }
            });
        }
    }
    Array2::from_shape_vec((d.cin * kh * kw, ncols), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters columns back onto the input grid.
fn col2im<T: Real>(cols: &Array2<T>, d: &Dims, geom: &ConvGeometry) -> Vec<T> {
    let [h, wd] = geom.input;
    let [ho, wo] = geom.output;
    let [kh, kw] = geom.kernel;
    let (sw, pw) = (geom.stride[1], geom.pad[1]);
    let ncols = d.batch * ho * wo;
    let cols = cols.as_slice().expect("standard layout");
    let mut dx = vec![T::zero(); d.batch * d.cin * h * wd];
    for b in 0..d.batch {
        for ci in 0..d.cin {
            let x_plane = &mut dx[(b * d.cin + ci) * h * wd..][..h * wd];
            for_each_tap(geom, |ky, kx, oy, iy, lo, hi| {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * ncols + b * ho * wo + oy * wo..][..wo];
                let x_row = &mut x_plane[iy * wd..][..wd];
                for ox in lo..hi {
                    x_row[ox * sw + kx - pw] += src[ox];
                }
            });
        }
    }
    dx
}

/// `(batch, c, hw)` to `(c, batch·hw)`.
fn channels_first<T: Real>(a: &[T], batch: usize, c: usize, hw: usize) -> Array2<T> {
    let v = ArrayView3::from_shape((batch, c, hw), a).expect("channel layout");
    let mut out = Array2::zeros((c, batch * hw));
    for b in 0..batch {
        out.slice_mut(s![.., b * hw..(b + 1) * hw]).assign(&v.index_axis(Axis(0), b));
    }
    out
}

/// `(c, batch·hw)` to `(batch, c, hw)`, flattened.
fn batch_first<T: Real>(m: &Array2<T>, batch: usize, hw: usize) -> Vec<T> {
    let c = m.nrows();
    let mut out = Vec::with_capacity(batch * c * hw);
    for b in 0..batch {
        for row in m.slice(s![.., b * hw..(b + 1) * hw]).rows() {
            out.extend(row.iter().copied());
        }
    }
    out
}

fn kernel_matrix<'a, T: Real>(w: &'a [T], d: &Dims, geom: &ConvGeometry) -> ArrayView2<'a, T> {
    let taps = geom.kernel[0] * geom.kernel[1];
    ArrayView2::from_shape((d.cout, d.cin * taps), w).expect("kernel layout")
}

fn matmul<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> Array2<T> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut c);
    c
}

fn correlate<T: Real>(x: &[T], w: &[T], d: &Dims, geom: &ConvGeometry) -> Vec<T> {
    let cols = im2col(x, d, geom);
    let out = matmul(kernel_matrix(w, d, geom), cols.view());
    batch_first(&out, d.batch, geom.output[0] * geom.output[1])
}

fn correlate_adjoint_input<T: Real>(g: &[T], w: &[T], d: &Dims, geom: &ConvGeometry) -> Vec<T> {
    let g = channels_first(g, d.batch, d.cout, geom.output[0] * geom.output[1]);
    let cols = matmul(kernel_matrix(w, d, geom).t(), g.view());
    col2im(&cols, d, geom)
}

fn correlate_adjoint_kernel<T: Real>(x: &[T], g: &[T], d: &Dims, geom: &ConvGeometry) -> Vec<T> {
    let cols = im2col(x, d, geom);
    let g = channels_first(g, d.batch, d.cout, geom.output[0] * geom.output[1]);
    matmul(g.view(), cols.t()).into_raw_vec_and_offset().0
}

fn contiguous<T: Real>(a: &ArrayD<T>) -> std::borrow::Cow<'_, [T]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

/// Forward correlation on 4D operands.
pub(crate) fn conv_raw<'t, T: Real>(x: Var<'t, T>, w: Var<'t, T>, geom: &ConvGeometry) -> Var<'t, T> {
    let (xv, wv) = (x.value(), w.value());
    let (xs, ws) = (xv.shape(), wv.shape());
    let d = Dims { batch: xs[0], cin: xs[1], cout: ws[0] };
    let out = correlate(&contiguous(&xv), &contiguous(&wv), &d, geom);
    let shape = IxDyn(&[d.batch, d.cout, geom.output[0], geom.output[1]]);
    let out = ArrayD::from_shape_vec(shape, out).expect("conv output shape");
    x.tape.push("conv", out, Op::Conv { x: x.id, w: w.id, geom: geom.clone() })
}

/// Adjoint of the correlation with respect to its input; `g` lives on the
/// output side, the result on the input side.
pub(crate) fn conv_input_grad<'t, T: Real>(g: Var<'t, T>, w: Var<'t, T>, geom: &ConvGeometry) -> Var<'t, T> {
    let (gv, wv) = (g.value(), w.value());
    let (gs, ws) = (gv.shape(), wv.shape());
    let d = Dims { batch: gs[0], cin: ws[1], cout: ws[0] };
    let out = correlate_adjoint_input(&contiguous(&gv), &contiguous(&wv), &d, geom);
    let shape = IxDyn(&[d.batch, d.cin, geom.input[0], geom.input[1]]);
    let out = ArrayD::from_shape_vec(shape, out).expect("conv transpose output shape");
    g.tape.push("conv_transpose", out, Op::ConvInputGrad { g: g.id, w: w.id, geom: geom.clone() })
}

/// Adjoint of the correlation with respect to its kernel.
pub(crate) fn conv_weight_grad<'t, T: Real>(x: Var<'t, T>, g: Var<'t, T>, geom: &ConvGeometry) -> Var<'t, T> {
    let (xv, gv) = (x.value(), g.value());
    let (xs, gs) = (xv.shape(), gv.shape());
    let d = Dims { batch: xs[0], cin: xs[1], cout: gs[1] };
    let out = correlate_adjoint_kernel(&contiguous(&xv), &contiguous(&gv), &d, geom);
    let shape = IxDyn(&[d.cout, d.cin, geom.kernel[0], geom.kernel[1]]);
    let out = ArrayD::from_shape_vec(shape, out).expect("conv kernel grad shape");
    x.tape.push("conv_kernel_grad", out, Op::ConvWeightGrad { x: x.id, g: g.id, geom: geom.clone() })
}
