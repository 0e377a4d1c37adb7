use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DomainCorpus, FeatureSequence};
use crate::error::{Result, VclabError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyOptions {
    /// Std of the isotropic frame noise.
    pub noise: f64,
    /// Magnitude of each mean coordinate.
    pub mean_scale: f64,
    pub frame_shift_ms: f64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions { noise: 0.25, mean_scale: 2.0, frame_shift_ms: 5.0 }
    }
}

/// A synthetic corpus together with the quantities it was built from.
#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub corpus: DomainCorpus,
    /// Domain means `m_k`.
    pub means: Vec<Array1<f64>>,
    /// `Q x 2` embedding of the content plane of each domain.
    pub planes: Vec<Array2<f64>>,
    /// `2 x N` content trajectory of each utterance index, shared by all
    /// domains.
    pub content: Vec<Array2<f64>>,
}

/// Sign pattern of domain `k`: the two domains of a pair get `+1` and `-1`;
/// more domains get Walsh rows, which are mutually orthogonal when Q is a
/// power of two greater than K.
fn mean_signs(k: usize, domains: usize, q: usize) -> Vec<f64> {
    if domains == 2 {
        let s = if k == 0 { 1.0 } else { -1.0 };
        return vec![s; q];
    }
    (0..q).map(|i| if ((k + 1) & i).count_ones().is_multiple_of(2) { 1.0 } else { -1.0 }).collect()
}

/// Gaussian-domain toy corpus.
///
/// Frame `t` of utterance `u` in domain `k` is
/// `m_k + P_k c_u(t) + noise`, where `c_u(t) = r(t) (cos th(t), sin th(t))`
/// is a slowly rotating content trajectory shared by all domains and `P_k`
/// embeds it in a domain-specific plane. Domain identity is therefore a
/// mean and covariance shift over common content. F0 is voiced everywhere,
/// log-normal around a domain-specific mean.
pub fn synth_toy_corpus(
    domains: usize,
    q: usize,
    utterances: usize,
    frames: usize,
    seed: u64,
    opts: ToyOptions,
) -> Result<ToyCorpus> {
    if domains < 2 {
        return Err(VclabError::Invalid(format!("need at least 2 domains, got {domains}")));
    }
    if q < 2 || utterances == 0 || frames < 2 {
        return Err(VclabError::Invalid(format!("invalid toy corpus size Q={q} U={utterances} N={frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(q, q, |_, _| StandardNormal.sample(&mut rng));
    let basis = gauss.qr().q();
    let planes: Vec<Array2<f64>> = (0..domains)
        .map(|k| Array2::from_shape_fn((q, 2), |(i, j)| basis[(i, (2 * k + j) % q)]))
        .collect();
    let means: Vec<Array1<f64>> =
        (0..domains).map(|k| Array1::from(mean_signs(k, domains, q)) * opts.mean_scale).collect();

    let content: Vec<Array2<f64>> = (0..utterances)
        .map(|_| {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let speed: f64 = rng.random_range(0.1..0.3);
            let r_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r_speed: f64 = rng.random_range(0.02..0.08);
            Array2::from_shape_fn((2, frames), |(j, t)| {
                let t = t as f64;
                let theta = phase + speed * t;
                let r = 1.5 + 0.3 * (r_phase + r_speed * t).sin();
                if j == 0 {
                    r * theta.cos()
                } else {
                    r * theta.sin()
                }
            })
        })
        .collect();

    let mut utts = Vec::with_capacity(domains);
    for k in 0..domains {
        let log_f0_mean = (100.0 * (1.0 + 0.25 * k as f64)).ln();
        let mut list = Vec::with_capacity(utterances);
        for c in &content {
            let mut data = planes[k].dot(c);
            for (mut col, _) in data.columns_mut().into_iter().zip(0..frames) {
                col += &means[k];
                col.mapv_inplace(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + opts.noise * e
                });
            }
            let f0 = (0..frames)
                .map(|t| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (log_f0_mean + 0.1 * (c[[1, t]] / 1.5) + 0.02 * e).exp()
                })
                .collect();
            list.push(FeatureSequence::new(data, opts.frame_shift_ms)?.with_f0(f0)?);
        }
        utts.push(list);
    }
    let names = (1..=domains).map(|k| format!("domain{k}")).collect();
    let corpus = DomainCorpus::new(names, utts, opts.frame_shift_ms)?;
    Ok(ToyCorpus { corpus, means, planes, content })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let a = synth_toy_corpus(3, 8, 2, 16, 9, ToyOptions::default()).unwrap();
        let b = synth_toy_corpus(3, 8, 2, 16, 9, ToyOptions::default()).unwrap();
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn noiseless_frames_are_affine_images_of_shared_content() {
        let opts = ToyOptions { noise: 0.0, ..ToyOptions::default() };
        let t = synth_toy_corpus(4, 8, 3, 20, 1, opts).unwrap();
        for k in 0..4 {
            for (u, c) in t.content.iter().enumerate() {
                let x = &t.corpus.utterances[k][u].data;
                let recovered = t.planes[k].t().dot(&(x - &t.means[k].view().insert_axis(ndarray::Axis(1))));
                for (a, b) in recovered.iter().zip(c) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_domain_rejected() {
        assert!(synth_toy_corpus(1, 8, 2, 16, 0, ToyOptions::default()).is_err());
    }
}
