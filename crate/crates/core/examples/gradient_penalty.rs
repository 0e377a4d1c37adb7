//! Gradient penalty of a few critics on random interpolates: zero for a
//! unit-norm linear critic, one for a constant, and growing with the slope
//! otherwise.
//!
//!     cargo run --example gradient_penalty

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vclab::autodiff::Tape;
use vclab::objectives::gradient_penalty;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = [8, 4, 16];
    let real = ArrayD::from_shape_fn(IxDyn(&shape), |_| rng.random_range(-1.0..1.0));
    let fake = ArrayD::from_shape_fn(IxDyn(&shape), |_| rng.random_range(-1.0..1.0));
    let w: ArrayD<f64> = ArrayD::from_shape_fn(IxDyn(&[1, 4, 16]), |_| rng.random_range(-1.0..1.0));
    let unit = &w / w.mapv(|v| v * v).sum().sqrt();

    let tape = Tape::<f64>::new();
    for slope in [0.0, 0.5, 1.0, 2.0] {
        let wv = tape.constant(unit.mapv(|v| v * slope));
        let gp = gradient_penalty(&tape, &real, &fake, &mut rng, |x| Ok((x * wv).sum_axes(&[1, 2]).reshape(&[8])))?;
        println!("linear critic with gradient norm {slope:.1}: penalty {:.3e}", gp.item());
    }
    let gp = gradient_penalty(&tape, &real, &fake, &mut rng, |x| Ok(x.square().sum_axes(&[1, 2]).reshape(&[8]).scale(0.5)))?;
    println!("quadratic critic |x|^2 / 2: penalty {:.4}", gp.item());
    Ok(())
}
