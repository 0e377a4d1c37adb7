use rand::RngCore;
use vclab_autodiff::{Bound, ParamStore, Real, Var};

use super::layers::{append, check_conditioning, Conv, GluBlock, Spec};
use crate::config::GeneratorKind;
use crate::error::{Result, VclabError};

/// Encoder-decoder generator of gated convolutions.
///
/// Input and output are `(B, Q, N)`. The 1D variant treats the Q features
/// as channels; the 2D variant treats the sequence as a one-channel image.
/// Two stride-2 stages down and two up, so N must be a multiple of 4.
#[derive(Clone, Debug)]
pub struct Generator {
    kind: GeneratorKind,
    q: usize,
    domains: usize,
    blocks: Vec<GluBlock>,
    out: Conv,
}

impl Generator {
    /// `domains` is the length of the one-hot conditioning vector (0 for an
    /// unconditional CycleGAN mapping).
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
        name: &str,
        kind: GeneratorKind,
        q: usize,
        domains: usize,
        widths: [usize; 3],
    ) -> Result<Self> {
        let [c1, c2, c3] = widths;
        let k = domains;
        let n = |i: usize| format!("{name}.{i}");
        let (blocks, out) = match kind {
            GeneratorKind::OneD => {
                let same5 = Spec::d1(5, 1, 2);
                let down = Spec::d1(4, 2, 1);
                let blocks = vec![
                    GluBlock::new(store, rng, &n(0), q + k, c1, same5, false, 0),
                    GluBlock::new(store, rng, &n(1), c1 + k, c2, down, false, 0),
                    GluBlock::new(store, rng, &n(2), c2 + k, c3, down, false, 0),
                    GluBlock::new(store, rng, &n(3), c3 + k, c3, same5, false, 0),
                    GluBlock::new(store, rng, &n(4), c3 + k, c2, down, true, 0),
                    GluBlock::new(store, rng, &n(5), c2 + k, c1, down, true, 0),
                ];
                (blocks, Conv::new(store, rng, &n(6), c1 + k, q, same5, false, true))
            }
            GeneratorKind::TwoD => {
                if !q.is_multiple_of(4) {
                    return Err(VclabError::Shape(format!("2D generator needs Q divisible by 4, got {q}")));
                }
                let wide = Spec::d2([3, 9], [1, 1], [1, 4]);
                let down = Spec::d2([4, 8], [2, 2], [1, 3]);
                let mid = Spec::d2([3, 5], [1, 1], [1, 2]);
                let blocks = vec![
                    GluBlock::new(store, rng, &n(0), 1 + k, c1, wide, false, q),
                    GluBlock::new(store, rng, &n(1), c1 + k, c2, down, false, q / 2),
                    GluBlock::new(store, rng, &n(2), c2 + k, c3, down, false, q / 4),
                    GluBlock::new(store, rng, &n(3), c3 + k, c3, mid, false, q / 4),
                    GluBlock::new(store, rng, &n(4), c3 + k, c2, down, true, q / 2),
                    GluBlock::new(store, rng, &n(5), c2 + k, c1, down, true, q),
                ];
                (blocks, Conv::new(store, rng, &n(6), c1 + k, 1, wide, false, true))
            }
        };
        Ok(Generator { kind, q, domains, blocks, out })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn feature_dim(&self) -> usize {
        self.q
    }

    pub fn domains(&self) -> usize {
        self.domains
    }

    /// `cond` is a `(B, K)` one-hot matrix, required iff the generator is
    /// conditional.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>, cond: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.q {
            return Err(VclabError::Shape(format!("generator expects (B, {}, N), got {shape:?}", self.q)));
        }
        let (b, n) = (shape[0], shape[2]);
        if n == 0 || n % 4 != 0 {
            return Err(VclabError::Shape(format!("sequence length {n} is not a positive multiple of 4")));
        }
        check_conditioning(cond, self.domains, b)?;
        let mut h = match self.kind {
            GeneratorKind::OneD => x,
            GeneratorKind::TwoD => x.reshape(&[b, 1, self.q, n]),
        };
        for block in &self.blocks {
            h = block.forward(p, append(h, cond))?;
        }
        let y = self.out.forward(p, append(h, cond))?;
        Ok(y.reshape(&[b, self.q, n]))
    }
}
