use rand::RngCore;
use vclab_autodiff::{Bound, ParamStore, Real, Var};

use super::layers::{maybe_dropout, Conv, GluBlock, Spec};
use crate::error::{Result, VclabError};

pub struct ClassifierOutput<'t, T: Real> {
    /// `(B, L)` log of the renormalized product of segment distributions.
    pub log_probs: Var<'t, T>,
    /// `(B, L, P)` per-segment log-softmax.
    pub segment_log_probs: Var<'t, T>,
}

/// Turns `(B, L, P)` segment logits into `(B, L)` aggregated
/// log-probabilities: sum of segment log-softmaxes, then log-normalized.
pub fn aggregate<'t, T: Real>(logits: Var<'t, T>) -> Var<'t, T> {
    let s = logits.shape();
    logits.log_softmax(1).sum_axes(&[2]).reshape(&[s[0], s[1]]).log_softmax(1)
}

/// Segment-wise softmax classifier over L classes.
#[derive(Clone, Debug)]
pub struct Classifier {
    q: usize,
    classes: usize,
    dropout: f64,
    blocks: Vec<GluBlock>,
    out: Conv,
}

impl Classifier {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        q: usize,
        classes: usize,
        width: usize,
        dropout: f64,
    ) -> Self {
        let n = |i: usize| format!("{name}.{i}");
        let down = Spec::d1(4, 2, 1);
        let blocks = vec![
            GluBlock::new(store, rng, &n(0), q, width, Spec::d1(3, 1, 1), false, 0),
            GluBlock::new(store, rng, &n(1), width, width, down, false, 0),
            GluBlock::new(store, rng, &n(2), width, width, down, false, 0),
        ];
        let out = Conv::new(store, rng, &n(3), width, classes, Spec::d1(3, 1, 1), false, true);
        Classifier { q, classes, dropout, blocks, out }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ClassifierOutput<'t, T>> {
        let shape = y.shape();
        if shape.len() != 3 || shape[1] != self.q {
            return Err(VclabError::Shape(format!("classifier expects (B, {}, N), got {shape:?}", self.q)));
        }
        let mut h = y;
        for block in &self.blocks {
            h = maybe_dropout(block.forward(p, h)?, self.dropout, &mut rng);
        }
        let logits = self.out.forward(p, h)?;
        Ok(ClassifierOutput { segment_log_probs: logits.log_softmax(1), log_probs: aggregate(logits) })
    }
}
