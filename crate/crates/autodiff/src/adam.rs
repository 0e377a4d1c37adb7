use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;
use crate::real::Real;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn with_beta1(mut self, beta1: f64) -> Self {
        self.beta1 = beta1;
        self
    }

    /// Applies one update to every parameter in `store` from its `grad`
    /// buffer. If any gradient is non-finite nothing is changed.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(bad) = store.iter().find(|p| !p.grad.iter().all(|g| g.is_finite())) {
            return Err(AutodiffError::NonFiniteGradient(bad.name.clone()));
        }
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        let one = T::one();
        for p in store.iter_mut() {
            p.adam.step += 1;
            let t = p.adam.step as i32;
            let c1 = one - b1.powi(t);
            let c2 = one - b2.powi(t);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut p.adam.m)
                .and(&mut p.adam.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
