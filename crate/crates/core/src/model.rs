//! The networks of one training run and the conversion pipeline built on
//! them.

use ndarray::{Array2, ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vclab_autodiff::{ParamStore, Real, Tape, Var};

use crate::config::{Formulation, NetConfig};
use crate::error::{Result, VclabError};
use crate::eval::{augmented_report, separate_report, AdversaryReport};
use crate::features::{
    convert_f0, convert_postprocess, crop, denormalize, normalize, pad_to_multiple, DomainStats, FeatureSequence,
};
use crate::nets::{one_hot, Classifier, Generator, MultiTaskDiscriminator, PatchDiscriminator};

/// Everything needed to rebuild the networks, apart from their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub formulation: Formulation,
    pub feature_dim: usize,
    pub domain_names: Vec<String>,
    pub stats: Vec<DomainStats>,
    pub frame_shift_ms: f64,
    pub nets: NetConfig,
    pub domain_pair: Option<(usize, usize)>,
    pub init_seed: u64,
}

impl ModelInfo {
    pub fn domains(&self) -> usize {
        self.domain_names.len()
    }
}

#[derive(Clone, Debug)]
pub enum Nets {
    CycleGan { g: Generator, f: Generator, d_x: PatchDiscriminator, d_y: PatchDiscriminator },
    CStarGan { g: Generator, d: PatchDiscriminator, c: Classifier },
    WStarGan { g: Generator, dc: MultiTaskDiscriminator },
    Augmented { g: Generator, a: Classifier },
}

/// Networks plus one parameter store per player: `gen` (G, and F for
/// CycleGAN), `disc` (the discriminators, critic or augmented classifier)
/// and `cls` (C-StarGAN's classifier, empty otherwise).
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub info: ModelInfo,
    pub nets: Nets,
    pub gen: ParamStore<T>,
    pub disc: ParamStore<T>,
    pub cls: ParamStore<T>,
}

pub(crate) fn to_tensor<T: Real>(x: &Array2<f64>) -> ArrayD<T> {
    x.mapv(T::lit).insert_axis(Axis(0)).into_dyn()
}

impl<T: Real> Model<T> {
    pub fn new(info: ModelInfo) -> Result<Self> {
        let k = info.domains();
        let q = info.feature_dim;
        if k < 2 {
            return Err(VclabError::Invalid(format!("need at least 2 domains, got {k}")));
        }
        if info.stats.len() != k {
            return Err(VclabError::Invalid("one set of statistics per domain is required".into()));
        }
        let nc = &info.nets;
        let mut rng = ChaCha8Rng::seed_from_u64(info.init_seed);
        let (mut gen, mut disc, mut cls) = (ParamStore::new(), ParamStore::new(), ParamStore::new());
        let kind = nc.generator;
        let nets = match info.formulation {
            Formulation::CycleGan => {
                let (s, t) = info.domain_pair.ok_or_else(|| VclabError::Config("cyclegan needs a domain pair".into()))?;
                for d in [s, t] {
                    if d >= k {
                        return Err(VclabError::DomainOutOfRange { index: d, count: k });
                    }
                }
                Nets::CycleGan {
                    g: Generator::new(&mut gen, &mut rng, "g", kind, q, 0, nc.generator_widths)?,
                    f: Generator::new(&mut gen, &mut rng, "f", kind, q, 0, nc.generator_widths)?,
                    d_x: PatchDiscriminator::new(&mut disc, &mut rng, "d_x", q, 0, nc.discriminator_width, nc.dropout),
                    d_y: PatchDiscriminator::new(&mut disc, &mut rng, "d_y", q, 0, nc.discriminator_width, nc.dropout),
                }
            }
            Formulation::CStarGan => Nets::CStarGan {
                g: Generator::new(&mut gen, &mut rng, "g", kind, q, k, nc.generator_widths)?,
                d: PatchDiscriminator::new(&mut disc, &mut rng, "d", q, k, nc.discriminator_width, nc.dropout),
                c: Classifier::new(&mut cls, &mut rng, "c", q, k, nc.classifier_width, nc.dropout),
            },
            Formulation::WStarGan => Nets::WStarGan {
                g: Generator::new(&mut gen, &mut rng, "g", kind, q, k, nc.generator_widths)?,
                dc: MultiTaskDiscriminator::new(&mut disc, &mut rng, "dc", q, k, nc.multitask_widths, nc.dropout),
            },
            Formulation::AStarGan1 | Formulation::AStarGan2 => {
                let classes = if info.formulation == Formulation::AStarGan1 { 2 * k } else { k + 1 };
                Nets::Augmented {
                    g: Generator::new(&mut gen, &mut rng, "g", kind, q, k, nc.generator_widths)?,
                    a: Classifier::new(&mut disc, &mut rng, "a", q, classes, nc.augmented_width, nc.dropout),
                }
            }
        };
        Ok(Model { info, nets, gen, disc, cls })
    }

    pub fn domains(&self) -> usize {
        self.info.domains()
    }

    pub fn stores(&self) -> [(&'static str, &ParamStore<T>); 3] {
        [("gen", &self.gen), ("disc", &self.disc), ("cls", &self.cls)]
    }

    pub fn stores_mut(&mut self) -> [(&'static str, &mut ParamStore<T>); 3] {
        [("gen", &mut self.gen), ("disc", &mut self.disc), ("cls", &mut self.cls)]
    }

    /// Target domains this model can convert into.
    pub fn check_target(&self, target: usize) -> Result<()> {
        let k = self.domains();
        if target >= k {
            return Err(VclabError::DomainOutOfRange { index: target, count: k });
        }
        if let Some((s, t)) = self.info.domain_pair {
            if self.info.formulation == Formulation::CycleGan && target != s && target != t {
                return Err(VclabError::Invalid(format!(
                    "this cyclegan model converts between domains {s} and {t} only"
                )));
            }
        }
        Ok(())
    }

    /// Runs the generator on one normalized `Q x N` sequence (`N` a multiple
    /// of 4) in evaluation mode.
    pub fn generate(&self, x: &Array2<f64>, target: usize) -> Result<Array2<f64>> {
        Ok(self.generate_batch(std::slice::from_ref(x), &[target])?.remove(0))
    }

    /// Runs the generator on equally long normalized sequences as one batch,
    /// so batch normalization sees all of them together. CycleGAN runs each
    /// direction as its own batch.
    pub fn generate_batch(&self, xs: &[Array2<f64>], targets: &[usize]) -> Result<Vec<Array2<f64>>> {
        if xs.is_empty() || xs.len() != targets.len() {
            return Err(VclabError::Invalid(format!("{} sequences for {} targets", xs.len(), targets.len())));
        }
        if xs.iter().any(|x| x.dim() != xs[0].dim()) {
            return Err(VclabError::Shape("batched sequences differ in shape".into()));
        }
        for &t in targets {
            self.check_target(t)?;
        }
        let tape = Tape::<T>::new();
        let p = self.gen.bind(&tape, false);
        let stack = |idx: &[usize]| -> Result<Var<'_, T>> {
            let views: Vec<_> = idx.iter().map(|&i| xs[i].view()).collect();
            let x = ndarray::stack(Axis(0), &views).map_err(|e| VclabError::Shape(e.to_string()))?;
            Ok(tape.constant(x.mapv(T::lit).into_dyn()))
        };
        let mut out = vec![Array2::zeros((0, 0)); xs.len()];
        let mut run = |idx: Vec<usize>, y: Var<'_, T>| {
            let v = y.value();
            for (j, i) in idx.into_iter().enumerate() {
                let s = v.index_axis(Axis(0), j);
                out[i] = Array2::from_shape_fn((s.shape()[0], s.shape()[1]), |(q, n)| s[[q, n]].as_f64());
            }
        };
        match &self.nets {
            Nets::CycleGan { g, f, .. } => {
                let (_, t) = self.info.domain_pair.expect("checked at construction");
                let (fwd, back): (Vec<usize>, Vec<usize>) = (0..xs.len()).partition(|&i| targets[i] == t);
                for (idx, net) in [(fwd, g), (back, f)] {
                    if !idx.is_empty() {
                        let y = net.forward(&p, stack(&idx)?, None)?;
                        run(idx, y);
                    }
                }
            }
            Nets::CStarGan { g, .. } | Nets::WStarGan { g, .. } | Nets::Augmented { g, .. } => {
                let cond = tape.constant(one_hot(targets, self.domains())?);
                let y = g.forward(&p, stack(&(0..xs.len()).collect::<Vec<_>>())?, Some(cond))?;
                run((0..xs.len()).collect(), y);
            }
        }
        if out.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(VclabError::NonFiniteLoss("generator output".into()));
        }
        Ok(out)
    }

    /// Domain whose statistics best explain `x`, by diagonal Gaussian
    /// log-likelihood of the voiced frames.
    pub fn infer_source(&self, x: &FeatureSequence) -> usize {
        let score = |s: &DomainStats| -> f64 {
            x.voiced_frames()
                .map(|n| {
                    (0..x.dim())
                        .map(|q| {
                            let z = (x.data[[q, n]] - s.psi[q]) / s.zeta[q];
                            -0.5 * z * z - s.zeta[q].ln()
                        })
                        .sum::<f64>()
                })
                .sum()
        };
        let scores: Vec<f64> = self.info.stats.iter().map(score).collect();
        (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap_or(0)
    }

    /// Normalize, pad, generate, denormalize, crop, match the target
    /// statistics and map F0. `source` is inferred when absent.
    pub fn convert(&self, x: &FeatureSequence, source: Option<usize>, target: usize) -> Result<Conversion> {
        self.check_target(target)?;
        let k = self.domains();
        let source = match source {
            Some(s) if s >= k => return Err(VclabError::DomainOutOfRange { index: s, count: k }),
            Some(s) => s,
            None => self.infer_source(x),
        };
        if x.dim() != self.info.feature_dim {
            return Err(VclabError::Shape(format!("expected {} features, got {}", self.info.feature_dim, x.dim())));
        }
        let (src, tgt) = (&self.info.stats[source], &self.info.stats[target]);
        let (padded, n) = pad_to_multiple(&normalize(x, src)?, 4);
        let y = self.generate(&padded.data, target)?;
        let normalized = FeatureSequence { data: y, ..padded };
        let out = crop(&denormalize(&normalized, tgt)?, n);
        let mut out = convert_postprocess(&out, tgt)?;
        if let Some(f0) = &x.f0 {
            out.f0 = Some(convert_f0(f0, src, tgt)?);
        }
        out.voiced = x.voiced.clone();
        Ok(Conversion { sequence: out, normalized: normalized.data, source, target })
    }

    /// Mean real and target probabilities the trained adversary assigns to
    /// normalized generator outputs, averaged over output patches.
    pub fn adversary_report(&self, outputs: &[Array2<f64>], targets: &[usize]) -> Result<AdversaryReport> {
        if outputs.len() != targets.len() {
            return Err(VclabError::Shape("one target per output is required".into()));
        }
        let k = self.domains();
        let tape = Tape::<T>::new();
        let dp = self.disc.bind(&tape, false);
        let cp = self.cls.bind(&tape, false);
        let mut probs = Vec::new();
        let mut d_vals = Vec::new();
        let mut seg_targets = Vec::new();
        // (B, L, P) segment log-probabilities to one row per patch.
        let rows = |lp: Var<'_, T>| -> Vec<Vec<f64>> {
            let v = lp.value();
            let (l, p) = (v.shape()[1], v.shape()[2]);
            (0..p).map(|j| (0..l).map(|c| v[[0, c, j]].as_f64().exp()).collect()).collect()
        };
        for (x, &t) in outputs.iter().zip(targets) {
            self.check_target(t)?;
            let xv = tape.constant(to_tensor(x));
            match &self.nets {
                Nets::CycleGan { .. } => {
                    return Err(VclabError::Invalid("adversary report needs a multi-domain formulation".into()));
                }
                Nets::Augmented { a, .. } => {
                    for r in rows(a.forward(&dp, xv, None)?.segment_log_probs) {
                        probs.extend(r);
                        seg_targets.push(t);
                    }
                }
                Nets::CStarGan { d, c, .. } => {
                    let cond = tape.constant(one_hot(&[t], k)?);
                    let dl = d.forward(&dp, xv, Some(cond), None)?.log_patches.value().mapv(|v| v.as_f64().exp());
                    let cl = rows(c.forward(&cp, xv, None)?.segment_log_probs);
                    // Patch counts differ between D and C; average each per output.
                    d_vals.push(dl.mean().unwrap_or(f64::NAN));
                    let mean: Vec<f64> = (0..k).map(|c| cl.iter().map(|r| r[c]).sum::<f64>() / cl.len() as f64).collect();
                    probs.extend(mean);
                    seg_targets.push(t);
                }
                Nets::WStarGan { dc, .. } => {
                    let o = dc.forward(&dp, xv, None)?;
                    d_vals.push(o.patch_scores.value().mapv(|v| v.as_f64()).mean().unwrap_or(f64::NAN));
                    let cl = o.class_log_probs.value();
                    probs.extend((0..k).map(|c| cl[[0, c]].as_f64().exp()));
                    seg_targets.push(t);
                }
            }
        }
        let width = probs.len() / seg_targets.len().max(1);
        let probs = Array2::from_shape_vec((seg_targets.len(), width), probs)
            .map_err(|e| VclabError::Shape(e.to_string()))?;
        match &self.nets {
            Nets::Augmented { .. } => augmented_report(&probs, &seg_targets, k),
            _ => separate_report(&d_vals, &probs, &seg_targets),
        }
    }
}

/// A converted utterance together with the raw generator output.
#[derive(Clone, Debug)]
pub struct Conversion {
    pub sequence: FeatureSequence,
    /// Generator output in the normalized domain, before cropping.
    pub normalized: Array2<f64>,
    pub source: usize,
    pub target: usize,
}
