#![allow(dead_code)]

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vclab_autodiff::{Real, Tape, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<T> {
    ArrayD::from_shape_fn(shape, |_| T::lit(rng.random_range(lo..hi)))
}

/// Central finite differences of a scalar function, evaluated on fresh tapes.
pub fn numeric_grad<T, F>(inputs: &[ArrayD<T>], h: f64, f: &F) -> Vec<ArrayD<f64>>
where
    T: Real,
    F: for<'t> Fn(&[Var<'t, T>]) -> Var<'t, T>,
{
    let eval = |xs: &[ArrayD<T>]| -> f64 {
        let tape = Tape::<T>::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&vars).item().as_f64()
    };
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = ArrayD::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let base = inputs[i].as_slice_memory_order().unwrap()[j];
            plus[i].as_slice_memory_order_mut().unwrap()[j] = base + T::lit(h);
            minus[i].as_slice_memory_order_mut().unwrap()[j] = base - T::lit(h);
            let d = (eval(&plus) - eval(&minus)) / (2.0 * h);
            g.as_slice_memory_order_mut().unwrap()[j] = d;
        }
        out.push(g);
    }
    out
}

pub fn analytic_grad<T, F>(inputs: &[ArrayD<T>], f: &F) -> Vec<ArrayD<f64>>
where
    T: Real,
    F: for<'t> Fn(&[Var<'t, T>]) -> Var<'t, T>,
{
    let tape = Tape::<T>::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let grads = f(&vars).backward().expect("backward");
    vars.iter().map(|&v| grads.value(v).mapv(|x| x.as_f64())).collect()
}

/// Largest elementwise relative error, with magnitudes below `floor` treated
/// as `floor`.
pub fn max_rel_err(a: &[ArrayD<f64>], b: &[ArrayD<f64>], floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (&p, &q) in x.iter().zip(y) {
            let denom = p.abs().max(q.abs()).max(floor);
            worst = worst.max((p - q).abs() / denom);
        }
    }
    worst
}

pub fn check64<F>(inputs: &[ArrayD<f64>], f: F)
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let a = analytic_grad(inputs, &f);
    let n = numeric_grad(inputs, 1e-5, &f);
    let err = max_rel_err(&a, &n, 1e-3);
    assert!(err < 1e-6, "relative error {err:e}\nanalytic {a:?}\nnumeric {n:?}");
}

pub fn check32<F>(inputs: &[ArrayD<f32>], f: F)
where
    F: for<'t> Fn(&[Var<'t, f32>]) -> Var<'t, f32>,
{
    let a = analytic_grad(inputs, &f);
    let n = numeric_grad(inputs, 1e-2, &f);
    let err = max_rel_err(&a, &n, 1.0);
    assert!(err < 1e-3, "relative error {err:e}\nanalytic {a:?}\nnumeric {n:?}");
}
