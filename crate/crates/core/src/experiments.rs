//! Scaled-down experiment protocols shared by the examples, the CLI and the
//! acceptance suite.

use ndarray::{concatenate, Array2, Axis};
use vclab_autodiff::Real;

use crate::error::Result;
use crate::eval::GaussianClassifier;
use crate::features::{pad_to_multiple, DomainCorpus};
use crate::model::Model;

/// Frame classifier fitted to each domain's normalized real frames.
pub fn frame_classifier(corpus: &DomainCorpus) -> Result<GaussianClassifier> {
    let mut frames = Vec::new();
    for k in 0..corpus.num_domains() {
        let utts = corpus.normalized(k)?;
        let views: Vec<_> = utts.iter().map(|u| u.data.view()).collect();
        frames.push(concatenate(Axis(1), &views).map_err(|e| crate::error::VclabError::Shape(e.to_string()))?);
    }
    GaussianClassifier::fit(&frames, 1e-6)
}

/// Per-target frame accuracy of converted utterances.
#[derive(Clone, Debug, PartialEq)]
pub struct ConversionAccuracy {
    /// Fraction of converted frames classified as their target domain.
    pub overall: f64,
    /// `[source][target]` accuracy; the diagonal is left at zero.
    pub pairs: Array2<f64>,
}

/// How converted utterances are grouped when the generator runs. Batch
/// normalization uses the statistics of whatever is run together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Batching {
    /// One utterance at a time.
    Single,
    /// Every conversion of equal padded length in one batch, mixing sources
    /// and targets as training batches do.
    Mixed,
}

/// Converts the first `per_domain` utterances of every domain into every
/// other domain (in the normalized space the networks work in) and
/// classifies each output frame.
pub fn conversion_accuracy<T: Real>(
    model: &Model<T>,
    corpus: &DomainCorpus,
    classifier: &GaussianClassifier,
    per_domain: usize,
    batching: Batching,
) -> Result<ConversionAccuracy> {
    let k = corpus.num_domains();
    // (source, target, padded input, original length)
    let mut jobs = Vec::new();
    for src in 0..k {
        for u in corpus.normalized(src)?.iter().take(per_domain) {
            let (padded, len) = pad_to_multiple(u, 4);
            for tgt in (0..k).filter(|&t| t != src) {
                if model.check_target(tgt).is_ok() {
                    jobs.push((src, tgt, padded.data.clone(), len));
                }
            }
        }
    }
    let mut outputs = vec![None; jobs.len()];
    match batching {
        Batching::Single => {
            for (i, (_, tgt, x, _)) in jobs.iter().enumerate() {
                outputs[i] = Some(model.generate(x, *tgt)?);
            }
        }
        Batching::Mixed => {
            let mut lengths: Vec<usize> = jobs.iter().map(|j| j.2.ncols()).collect();
            lengths.sort_unstable();
            lengths.dedup();
            for n in lengths {
                let idx: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].2.ncols() == n).collect();
                let xs: Vec<_> = idx.iter().map(|&i| jobs[i].2.clone()).collect();
                let ts: Vec<_> = idx.iter().map(|&i| jobs[i].1).collect();
                for (i, y) in idx.into_iter().zip(model.generate_batch(&xs, &ts)?) {
                    outputs[i] = Some(y);
                }
            }
        }
    }
    let mut hits = Array2::<f64>::zeros((k, k));
    let mut frames = Array2::<f64>::zeros((k, k));
    for ((src, tgt, _, len), y) in jobs.iter().zip(outputs) {
        let y = y.expect("every job converted");
        let y = y.slice(ndarray::s![.., ..*len]).to_owned();
        hits[[*src, *tgt]] += classifier.accuracy(&y, *tgt) * *len as f64;
        frames[[*src, *tgt]] += *len as f64;
    }
    let pairs = Array2::from_shape_fn((k, k), |(s, t)| if frames[[s, t]] > 0.0 { hits[[s, t]] / frames[[s, t]] } else { 0.0 });
    Ok(ConversionAccuracy { overall: hits.sum() / frames.sum().max(1.0), pairs })
}
