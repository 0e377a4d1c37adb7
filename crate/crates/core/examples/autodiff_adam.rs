//! Checks one gradient of a gated convolution against a central difference,
//! then fits the layer to a teacher filter with Adam.
//!
//!     cargo run --release --example autodiff_adam

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vclab::autodiff::nn::glu;
use vclab::autodiff::{conv, Adam, ConvOptions, ParamStore, Tape, Var};

fn model<'t>(x: Var<'t, f64>, w: Var<'t, f64>) -> Var<'t, f64> {
    let h = conv(x, w, &ConvOptions::new(1).padding(&[2])).unwrap();
    glu(h, 1).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: &[usize]| ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0));
    // batch 8, 3 input channels, 32 frames; 2 output channels after gating
    let x = rand(&[8, 3, 32]);
    let teacher = rand(&[4, 3, 5]);
    let tape = Tape::<f64>::new();
    let target = model(tape.constant(x.clone()), tape.constant(teacher)).value();

    let mut store = ParamStore::new();
    let w = store.add("w", rand(&[4, 3, 5]) * 0.1);
    let loss_at = |store: &ParamStore<f64>| {
        let tape = Tape::<f64>::new();
        let p = store.bind(&tape, true);
        let y = model(tape.constant(x.clone()), p.var(w));
        let loss = (y - tape.constant((*target).clone())).square().mean();
        (loss.item(), loss.backward().unwrap().value(p.var(w))[[0, 0, 0]])
    };
    let (_, analytic) = loss_at(&store);
    let h = 1e-6;
    let mut plus = store.clone();
    plus.get_mut(w).value[[0, 0, 0]] += h;
    let mut minus = store.clone();
    minus.get_mut(w).value[[0, 0, 0]] -= h;
    let numeric = (loss_at(&plus).0 - loss_at(&minus).0) / (2.0 * h);
    println!("d loss / d w[0,0,0]: tape {analytic:.6e}, central difference {numeric:.6e}");

    let adam = Adam::new(1e-2);
    for step in 0..=1500 {
        let tape = Tape::<f64>::new();
        let p = store.bind(&tape, true);
        let y = model(tape.constant(x.clone()), p.var(w));
        let loss = (y - tape.constant((*target).clone())).square().mean();
        if step % 300 == 0 {
            println!("step {step:>4}  mse {:.3e}", loss.item());
        }
        let grads = loss.backward()?;
        store.zero_grad();
        store.accumulate(&p, &grads);
        adam.step(&mut store)?;
    }
    Ok(())
}
