use rand::RngCore;
use vclab_autodiff::{Bound, ParamStore, Real, Var};

use super::layers::{append, check_conditioning, maybe_dropout, Conv, GluBlock, Spec};
use crate::error::{Result, VclabError};

/// Real/fake decision per local segment, combined as a product.
pub struct PatchOutput<'t, T: Real> {
    /// `(B,)` log of the product of patch probabilities.
    pub log_d: Var<'t, T>,
    /// `(B, P)` per-patch log-probabilities.
    pub log_patches: Var<'t, T>,
}

/// PatchGAN discriminator with sigmoid patch outputs, optionally
/// conditioned on the domain.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    q: usize,
    domains: usize,
    dropout: f64,
    blocks: Vec<GluBlock>,
    out: Conv,
}

impl PatchDiscriminator {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        q: usize,
        domains: usize,
        width: usize,
        dropout: f64,
    ) -> Self {
        let k = domains;
        let n = |i: usize| format!("{name}.{i}");
        let down = Spec::d1(4, 2, 1);
        let blocks = vec![
            GluBlock::new(store, rng, &n(0), q + k, width, Spec::d1(3, 1, 1), false, 0),
            GluBlock::new(store, rng, &n(1), width + k, width, down, false, 0),
            GluBlock::new(store, rng, &n(2), width + k, width, down, false, 0),
            GluBlock::new(store, rng, &n(3), width + k, width, down, false, 0),
        ];
        let out = Conv::new(store, rng, &n(4), width + k, 1, Spec::d1(3, 1, 1), false, true);
        PatchDiscriminator { q, domains, dropout, blocks, out }
    }

    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
        cond: Option<Var<'t, T>>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<PatchOutput<'t, T>> {
        let shape = y.shape();
        if shape.len() != 3 || shape[1] != self.q {
            return Err(VclabError::Shape(format!("discriminator expects (B, {}, N), got {shape:?}", self.q)));
        }
        check_conditioning(cond, self.domains, shape[0])?;
        let mut h = y;
        for block in &self.blocks {
            h = maybe_dropout(block.forward(p, append(h, cond))?, self.dropout, &mut rng);
        }
        let logits = self.out.forward(p, append(h, cond))?;
        let s = logits.shape();
        let log_patches = logits.reshape(&[s[0], s[2]]).log_sigmoid();
        let log_d = log_patches.sum_axes(&[1]).reshape(&[s[0]]);
        Ok(PatchOutput { log_d, log_patches })
    }
}

/// Output of the W-StarGAN two-head network.
pub struct MultiTaskOutput<'t, T: Real> {
    /// `(B,)` sum of patch scores.
    pub score: Var<'t, T>,
    /// `(B, P)` unbounded patch scores.
    pub patch_scores: Var<'t, T>,
    /// `(B, K)` aggregated class log-probabilities.
    pub class_log_probs: Var<'t, T>,
}

/// Shared gated-convolution trunk with a critic head and a domain
/// classifier head.
#[derive(Clone, Debug)]
pub struct MultiTaskDiscriminator {
    q: usize,
    dropout: f64,
    trunk: Vec<GluBlock>,
    score_head: Conv,
    class_head: Conv,
}

impl MultiTaskDiscriminator {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        q: usize,
        domains: usize,
        widths: [usize; 4],
        dropout: f64,
    ) -> Self {
        let n = |i: usize| format!("{name}.{i}");
        let down = Spec::d1(4, 2, 1);
        let same = Spec::d1(3, 1, 1);
        let [w0, w1, w2, w3] = widths;
        let trunk = vec![
            GluBlock::new(store, rng, &n(0), q, w0, down, false, 0),
            GluBlock::new(store, rng, &n(1), w0, w1, same, false, 0),
            GluBlock::new(store, rng, &n(2), w1, w2, down, false, 0),
            GluBlock::new(store, rng, &n(3), w2, w3, same, false, 0),
        ];
        let score_head = Conv::new(store, rng, &format!("{name}.score"), w3, 1, same, false, true);
        let class_head = Conv::new(store, rng, &format!("{name}.class"), w3, domains, same, false, true);
        MultiTaskDiscriminator { q, dropout, trunk, score_head, class_head }
    }

    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<MultiTaskOutput<'t, T>> {
        let shape = y.shape();
        if shape.len() != 3 || shape[1] != self.q {
            return Err(VclabError::Shape(format!("discriminator expects (B, {}, N), got {shape:?}", self.q)));
        }
        let mut h = y;
        for block in &self.trunk {
            h = maybe_dropout(block.forward(p, h)?, self.dropout, &mut rng);
        }
        let s = self.score_head.forward(p, h)?;
        let ss = s.shape();
        let patch_scores = s.reshape(&[ss[0], ss[2]]);
        let score = patch_scores.sum_axes(&[1]).reshape(&[ss[0]]);
        let class_log_probs = super::classifier::aggregate(self.class_head.forward(p, h)?);
        Ok(MultiTaskOutput { score, patch_scores, class_log_probs })
    }
}
