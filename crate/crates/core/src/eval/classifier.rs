use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1};

use crate::error::{Result, VclabError};

/// Quadratic discriminant analysis over feature frames: one full-covariance
/// Gaussian per class, equal priors.
#[derive(Clone, Debug)]
pub struct GaussianClassifier {
    means: Vec<DVector<f64>>,
    /// Inverse covariances.
    precisions: Vec<DMatrix<f64>>,
    log_dets: Vec<f64>,
}

impl GaussianClassifier {
    /// `frames[k]` holds the `Q x N_k` training frames of class `k`.
    /// `ridge` is added to every covariance diagonal.
    pub fn fit(frames: &[Array2<f64>], ridge: f64) -> Result<Self> {
        let q = frames.first().map_or(0, |f| f.nrows());
        let mut means = Vec::new();
        let mut precisions = Vec::new();
        let mut log_dets = Vec::new();
        for (k, f) in frames.iter().enumerate() {
            let n = f.ncols();
            if f.nrows() != q || n < 2 {
                return Err(VclabError::Invalid(format!("class {k} needs at least 2 frames of dimension {q}")));
            }
            let x = DMatrix::from_fn(q, n, |i, j| f[[i, j]]);
            let mean = x.column_mean();
            let centered = &x - &mean * DVector::from_element(n, 1.0).transpose();
            let cov = &centered * centered.transpose() / n as f64 + DMatrix::identity(q, q) * ridge;
            let chol = cov
                .cholesky()
                .ok_or_else(|| VclabError::Invalid(format!("class {k} covariance is not positive definite")))?;
            log_dets.push(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>());
            precisions.push(chol.inverse());
            means.push(mean);
        }
        Ok(GaussianClassifier { means, precisions, log_dets })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// Log-likelihood of `frame` under each class (up to a shared constant).
    pub fn log_likelihoods(&self, frame: ArrayView1<f64>) -> Vec<f64> {
        let x = DVector::from_iterator(frame.len(), frame.iter().copied());
        self.means
            .iter()
            .zip(&self.precisions)
            .zip(&self.log_dets)
            .map(|((m, p), ld)| {
                let d = &x - m;
                -0.5 * (d.dot(&(p * &d)) + ld)
            })
            .collect()
    }

    pub fn predict(&self, frame: ArrayView1<f64>) -> usize {
        let ll = self.log_likelihoods(frame);
        (0..ll.len()).max_by(|&a, &b| ll[a].total_cmp(&ll[b])).unwrap_or(0)
    }

    /// Fraction of the columns of `frames` predicted as `class`.
    pub fn accuracy(&self, frames: &Array2<f64>, class: usize) -> f64 {
        let hits = frames.columns().into_iter().filter(|c| self.predict(c.view()) == class).count();
        hits as f64 / frames.ncols().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn separates_shifted_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = |shift: f64| Array2::from_shape_fn((3, 200), |_| { let z: f64 = StandardNormal.sample(&mut rng); shift + z * 0.5 });
        let train = [draw(-2.0), draw(2.0)];
        let test = [draw(-2.0), draw(2.0)];
        let c = GaussianClassifier::fit(&train, 1e-6).unwrap();
        assert!(c.accuracy(&test[0], 0) > 0.99);
        assert!(c.accuracy(&test[1], 1) > 0.99);
    }
}
