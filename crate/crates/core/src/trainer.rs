//! Alternating updates of the adversaries and the generator.

use std::path::Path;

use ndarray::{s, Array2, ArrayD, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vclab_autodiff::{Adam, Bound, ParamStore, Real, Tape, Var};

use crate::config::{Formulation, TrainConfig};
use crate::error::{Result, VclabError};
use crate::features::{pad_to_multiple, DomainCorpus, FeatureSequence};
use crate::model::{Model, ModelInfo, Nets};
use crate::nets::one_hot;
use crate::objectives::{
    adversary_objectives, augmented_generator_loss, astargan1_losses, astargan2_losses, class_nll,
    cstargan_adv_losses, cycle_consistency_loss, cyclegan_adv_losses, generator_objective, gradient_penalty,
    identity_mapping_loss, sigmoid_generator_loss, Components, GenAdv,
};
use crate::util::write_atomic;

/// One minibatch. For the StarGAN variants `x` holds segments from the
/// `source` domains and `target` the conversion targets; the same `(x,
/// source)` pairs serve as real samples for the adversaries. For CycleGAN
/// `x` comes from the first domain of the pair and `y` from the second.
#[derive(Clone, Debug)]
pub struct StepBatch<T: Real> {
    pub x: ArrayD<T>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub y: Option<ArrayD<T>>,
    /// Seeds dropout masks and gradient-penalty sampling.
    pub seed: u64,
}

/// Named loss values of one step, in recording order.
pub type StepLosses = Vec<(&'static str, f64)>;

/// Per-term loss curves, one value per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    terms: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl LossHistory {
    pub fn push(&mut self, losses: &[(&str, f64)]) {
        for &(name, v) in losses {
            match self.terms.iter().position(|t| t == name) {
                Some(i) => self.values[i].push(v),
                None => {
                    self.terms.push(name.to_string());
                    self.values.push(vec![v]);
                }
            }
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn series(&self, term: &str) -> Option<&[f64]> {
        self.terms.iter().position(|t| t == term).map(|i| self.values[i].as_slice())
    }

    /// Number of recorded steps.
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One row per step (counted from 1), one column per term.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("step").chain(self.terms.iter().map(String::as_str)))?;
        for step in 0..self.len() {
            let vals = self.values.iter().map(|v| format!("{:?}", v[step]));
            w.write_record(std::iter::once((step + 1).to_string()).chain(vals))?;
        }
        w.into_inner().map_err(|e| VclabError::Invalid(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn check_finite(terms: &[(&'static str, Var<'_, impl Real>)]) -> Result<StepLosses> {
    terms
        .iter()
        .map(|&(name, v)| {
            let x = v.item().as_f64();
            if x.is_finite() { Ok((name, x)) } else { Err(VclabError::NonFiniteLoss(name.to_string())) }
        })
        .collect()
}

fn stack<T: Real>(segments: &[Array2<f64>]) -> ArrayD<T> {
    let (q, n) = segments[0].dim();
    ArrayD::from_shape_fn(vec![segments.len(), q, n], |i| T::lit(segments[i[0]][[i[1], i[2]]]))
}

pub struct Trainer<T: Real> {
    pub config: TrainConfig,
    pub model: Model<T>,
    /// Normalized utterances per domain.
    data: Vec<Vec<Array2<f64>>>,
    /// Completed steps.
    pub step: usize,
    pub history: LossHistory,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, corpus: &DomainCorpus) -> Result<Self> {
        config.validate()?;
        let info = ModelInfo {
            formulation: config.formulation,
            feature_dim: corpus.dim(),
            domain_names: corpus.names.clone(),
            stats: corpus.stats.clone(),
            frame_shift_ms: corpus.frame_shift_ms,
            nets: config.nets.clone(),
            domain_pair: config.domain_pair,
            init_seed: config.seed,
        };
        let model = Model::new(info)?;
        Self::with_model(config, model, corpus)
    }

    /// Continues training `model` (e.g. loaded from a checkpoint) on `corpus`.
    pub fn with_model(config: TrainConfig, model: Model<T>, corpus: &DomainCorpus) -> Result<Self> {
        config.validate()?;
        if corpus.num_domains() != model.domains() || corpus.dim() != model.info.feature_dim {
            return Err(VclabError::Invalid("corpus does not match the model's domains or dimension".into()));
        }
        let mut data = Vec::new();
        for k in 0..corpus.num_domains() {
            let utts = corpus.normalized(k)?;
            if utts.is_empty() {
                return Err(VclabError::Invalid(format!("domain `{}` has no utterances", corpus.names[k])));
            }
            data.push(utts.into_iter().map(|u| u.data).collect());
        }
        Ok(Trainer { config, model, data, step: 0, history: LossHistory::default() })
    }

    fn segment(&self, rng: &mut ChaCha8Rng, domain: usize) -> Array2<f64> {
        let utts = &self.data[domain];
        let u = &utts[rng.random_range(0..utts.len())];
        let len = self.config.segment_frames;
        if u.ncols() < len {
            let seq = FeatureSequence { data: u.clone(), frame_shift_ms: 1.0, voiced: None, f0: None };
            return pad_to_multiple(&seq, len).0.data;
        }
        let start = rng.random_range(0..=u.ncols() - len);
        u.slice(s![.., start..start + len]).to_owned()
    }

    /// The minibatch used at `step` (0-based). Depends only on the seed and
    /// the step, so a resumed run draws the same batches.
    pub fn sample_batch(&self, step: usize) -> StepBatch<T> {
        let mut rng = step_rng(self.config.seed, step as u64 + 1);
        let b = self.config.batch_size;
        let k = self.model.domains();
        let (x, source, target, y) = match self.config.domain_pair {
            Some((s, t)) if self.config.formulation == Formulation::CycleGan => {
                let xs: Vec<_> = (0..b).map(|_| self.segment(&mut rng, s)).collect();
                let ys: Vec<_> = (0..b).map(|_| self.segment(&mut rng, t)).collect();
                (xs, vec![s; b], vec![t; b], Some(stack(&ys)))
            }
            _ => {
                let source: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
                let xs: Vec<_> = source.iter().map(|&d| self.segment(&mut rng, d)).collect();
                let target = (0..b).map(|_| rng.random_range(0..k)).collect();
                (xs, source, target, None)
            }
        };
        StepBatch { x: stack(&x), source, target, y, seed: rng.next_u64() }
    }

    fn gen_adv(&self) -> GenAdv {
        GenAdv::from_flag(self.config.non_saturating)
    }

    /// Adversary objective (I_D + I_C, whose parameter sets are disjoint
    /// except for the shared W-StarGAN network) and its recorded terms.
    fn adversary_pass<'t>(
        &self,
        tape: &'t Tape<T>,
        b: &StepBatch<T>,
        trainable: bool,
    ) -> Result<(Bound<'t, T>, Bound<'t, T>, Var<'t, T>, Vec<(&'static str, Var<'t, T>)>)> {
        let m = &self.model;
        let w = &self.config.weights;
        let k = m.domains();
        let f = self.config.formulation;
        let gp_ = m.gen.bind(tape, false);
        let dp = m.disc.bind(tape, trainable);
        let cp = m.cls.bind(tape, trainable);
        let mut rng = step_rng(b.seed, 1);
        let dr = &mut rng as &mut dyn RngCore;
        let x = tape.constant(b.x.clone());
        let mut c = Components::default();
        let mut terms = Vec::new();
        match &m.nets {
            Nets::CycleGan { g, f: fnet, d_x, d_y } => {
                let y = tape.constant(b.y.clone().ok_or_else(|| VclabError::Invalid("cyclegan batch needs y".into()))?);
                let fake_y = g.forward(&gp_, x, None)?;
                let fake_x = fnet.forward(&gp_, y, None)?;
                let l = cyclegan_adv_losses(
                    d_y.forward(&dp, y, None, Some(&mut *dr))?.log_d,
                    d_y.forward(&dp, fake_y, None, Some(&mut *dr))?.log_d,
                    d_x.forward(&dp, x, None, Some(&mut *dr))?.log_d,
                    d_x.forward(&dp, fake_x, None, Some(&mut *dr))?.log_d,
                    self.gen_adv(),
                );
                c.d_adv = Some(l.d_y);
                c.d_adv_x = Some(l.d_x);
                terms.extend([("d_y", l.d_y), ("d_x", l.d_x)]);
            }
            Nets::CStarGan { g, d, c: cnet } => {
                let src = tape.constant(one_hot(&b.source, k)?);
                let tgt = tape.constant(one_hot(&b.target, k)?);
                let fake = g.forward(&gp_, x, Some(tgt))?;
                let l = cstargan_adv_losses(
                    d.forward(&dp, x, Some(src), Some(&mut *dr))?.log_d,
                    d.forward(&dp, fake, Some(tgt), Some(&mut *dr))?.log_d,
                    self.gen_adv(),
                );
                let cls = class_nll(cnet.forward(&cp, x, Some(&mut *dr))?.log_probs, &b.source)?;
                c.d_adv = Some(l.disc);
                c.cls_c = Some(cls);
                terms.extend([("d_adv", l.disc), ("cls_c", cls)]);
            }
            Nets::WStarGan { g, dc } => {
                let tgt = tape.constant(one_hot(&b.target, k)?);
                let fake = g.forward(&gp_, x, Some(tgt))?;
                let real = dc.forward(&dp, x, Some(&mut *dr))?;
                let fake_score = dc.forward(&dp, fake, Some(&mut *dr))?.score;
                let mut pair_rng = step_rng(b.seed, 2);
                let mut critic_rng = step_rng(b.seed, 3);
                let gp = gradient_penalty(tape, &b.x, &fake.value(), &mut pair_rng, |xh| {
                    Ok(dc.forward(&dp, xh, Some(&mut critic_rng))?.score)
                })?;
                let d_adv = fake_score.mean() - real.score.mean();
                let cls = class_nll(real.class_log_probs, &b.source)?;
                c.d_adv = Some(d_adv);
                c.gp = Some(gp);
                c.cls_c = Some(cls);
                terms.extend([("d_adv", d_adv), ("gp", gp), ("cls_c", cls)]);
            }
            Nets::Augmented { g, a } => {
                let tgt = tape.constant(one_hot(&b.target, k)?);
                let fake = g.forward(&gp_, x, Some(tgt))?;
                let real_lp = a.forward(&dp, x, Some(&mut *dr))?.log_probs;
                let fake_lp = a.forward(&dp, fake, Some(&mut *dr))?.log_probs;
                let l = if f == Formulation::AStarGan1 {
                    astargan1_losses(real_lp, &b.source, fake_lp, &b.target)?
                } else {
                    astargan2_losses(real_lp, &b.source, fake_lp, &b.target)?
                };
                c.d_adv = Some(l.disc);
                terms.push(("d_adv", l.disc));
            }
        }
        let (i_d, i_c) = adversary_objectives(f, w, &c)?;
        terms.push(("d_total", i_d));
        let total = match i_c {
            Some(i_c) => {
                terms.push(("c_total", i_c));
                i_d + i_c
            }
            None => i_d,
        };
        Ok((dp, cp, total, terms))
    }

    fn generator_pass<'t>(
        &self,
        tape: &'t Tape<T>,
        b: &StepBatch<T>,
        trainable: bool,
    ) -> Result<(Bound<'t, T>, Var<'t, T>, Vec<(&'static str, Var<'t, T>)>)> {
        let m = &self.model;
        let w = &self.config.weights;
        let k = m.domains();
        let rho = w.rho;
        let gp_ = m.gen.bind(tape, trainable);
        let dp = m.disc.bind(tape, false);
        let cp = m.cls.bind(tape, false);
        let mut rng = step_rng(b.seed, 4);
        let dr = &mut rng as &mut dyn RngCore;
        let x = tape.constant(b.x.clone());
        let mut c = Components::default();
        let mut terms = Vec::new();
        let form = self.gen_adv();
        match &m.nets {
            Nets::CycleGan { g, f, d_x, d_y } => {
                let y = tape.constant(b.y.clone().ok_or_else(|| VclabError::Invalid("cyclegan batch needs y".into()))?);
                let fake_y = g.forward(&gp_, x, None)?;
                let fake_x = f.forward(&gp_, y, None)?;
                let g_adv = sigmoid_generator_loss(d_y.forward(&dp, fake_y, None, Some(&mut *dr))?.log_d, form);
                let f_adv = sigmoid_generator_loss(d_x.forward(&dp, fake_x, None, Some(&mut *dr))?.log_d, form);
                let cyc = cycle_consistency_loss(f.forward(&gp_, fake_y, None)?, x, rho)?
                    + cycle_consistency_loss(g.forward(&gp_, fake_x, None)?, y, rho)?;
                let id = identity_mapping_loss(g.forward(&gp_, y, None)?, y, rho)?
                    + identity_mapping_loss(f.forward(&gp_, x, None)?, x, rho)?;
                c.f_adv = Some(f_adv);
                c.g_adv = Some(g_adv);
                c.cyc = Some(cyc);
                c.id = Some(id);
                terms.extend([("g_adv", g_adv), ("f_adv", f_adv), ("cyc", cyc), ("id", id)]);
            }
            Nets::CStarGan { g, .. } | Nets::WStarGan { g, .. } | Nets::Augmented { g, .. } => {
                let src = tape.constant(one_hot(&b.source, k)?);
                let tgt = tape.constant(one_hot(&b.target, k)?);
                let fake = g.forward(&gp_, x, Some(tgt))?;
                let cyc = cycle_consistency_loss(g.forward(&gp_, fake, Some(src))?, x, rho)?;
                let id = identity_mapping_loss(g.forward(&gp_, x, Some(src))?, x, rho)?;
                match &m.nets {
                    Nets::CStarGan { d, c: cnet, .. } => {
                        let g_adv = sigmoid_generator_loss(d.forward(&dp, fake, Some(tgt), Some(&mut *dr))?.log_d, form);
                        let cls = class_nll(cnet.forward(&cp, fake, Some(&mut *dr))?.log_probs, &b.target)?;
                        c.g_adv = Some(g_adv);
                        c.cls_g = Some(cls);
                        terms.extend([("g_adv", g_adv), ("cls_g", cls)]);
                    }
                    Nets::WStarGan { dc, .. } => {
                        let o = dc.forward(&dp, fake, Some(&mut *dr))?;
                        let g_adv = -o.score.mean();
                        let cls = class_nll(o.class_log_probs, &b.target)?;
                        c.g_adv = Some(g_adv);
                        c.cls_g = Some(cls);
                        terms.extend([("g_adv", g_adv), ("cls_g", cls)]);
                    }
                    Nets::Augmented { a, .. } => {
                        let lp = a.forward(&dp, fake, Some(&mut *dr))?.log_probs;
                        let g_adv = augmented_generator_loss(lp, &b.target, k)?;
                        c.g_adv = Some(g_adv);
                        terms.push(("g_adv", g_adv));
                    }
                    Nets::CycleGan { .. } => unreachable!(),
                }
                c.cyc = Some(cyc);
                c.id = Some(id);
                terms.extend([("cyc", cyc), ("id", id)]);
            }
        }
        let i_g = generator_objective(self.config.formulation, w, &c)?;
        terms.push(("g_total", i_g));
        Ok((gp_, i_g, terms))
    }

    /// Adversary losses on `b` without updating anything.
    pub fn adversary_losses(&self, b: &StepBatch<T>) -> Result<StepLosses> {
        let tape = Tape::new();
        let (_, _, _, terms) = self.adversary_pass(&tape, b, false)?;
        check_finite(&terms)
    }

    /// Generator losses on `b` without updating anything.
    pub fn generator_losses(&self, b: &StepBatch<T>) -> Result<StepLosses> {
        let tape = Tape::new();
        let (_, _, terms) = self.generator_pass(&tape, b, false)?;
        check_finite(&terms)
    }

    fn dc_adam(&self) -> Adam {
        Adam { beta2: self.config.beta2, ..Adam::new(self.config.alpha_dc).with_beta1(self.config.beta1_dc) }
    }

    fn g_adam(&self) -> Adam {
        Adam { beta2: self.config.beta2, ..Adam::new(self.config.alpha_g).with_beta1(self.config.beta1_g) }
    }

    /// One Adam update of every adversary (D, C or A) on `b`.
    pub fn update_adversaries(&mut self, b: &StepBatch<T>) -> Result<StepLosses> {
        let tape = Tape::new();
        let (dp, cp, total, terms) = self.adversary_pass(&tape, b, true)?;
        let losses = check_finite(&terms)?;
        let grads = total.backward()?;
        let adam = self.dc_adam();
        for (store, bound) in [(&mut self.model.disc, &dp), (&mut self.model.cls, &cp)] {
            update(store, bound, &grads, &adam)?;
        }
        Ok(losses)
    }

    /// One Adam update of the generator (G and F for CycleGAN) on `b`.
    pub fn update_generator(&mut self, b: &StepBatch<T>) -> Result<StepLosses> {
        let tape = Tape::new();
        let (gp_, total, terms) = self.generator_pass(&tape, b, true)?;
        let losses = check_finite(&terms)?;
        let grads = total.backward()?;
        let adam = self.g_adam();
        update(&mut self.model.gen, &gp_, &grads, &adam)?;
        Ok(losses)
    }

    /// Adversaries first, then the generator, on the batch of the current
    /// step. Records the losses and advances the step counter.
    pub fn train_step(&mut self) -> Result<StepLosses> {
        let b = self.sample_batch(self.step);
        let mut losses = self.update_adversaries(&b)?;
        losses.extend(self.update_generator(&b)?);
        self.history.push(&losses);
        self.step += 1;
        Ok(losses)
    }

    /// Trains until `iterations` steps are complete, calling `checkpoint`
    /// every `checkpoint_interval` steps.
    pub fn run(&mut self, mut checkpoint: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        let every = self.config.checkpoint_interval;
        while self.step < self.config.iterations {
            let losses = self.train_step()?;
            if self.step.is_multiple_of(100) || self.step == self.config.iterations {
                log::info!("step {}: {:?}", self.step, losses);
            }
            if every > 0 && self.step.is_multiple_of(every) && self.step < self.config.iterations {
                checkpoint(self)?;
            }
        }
        Ok(())
    }
}

fn update<T: Real>(
    store: &mut ParamStore<T>,
    bound: &Bound<'_, T>,
    grads: &vclab_autodiff::Gradients<'_, T>,
    adam: &Adam,
) -> Result<()> {
    if store.is_empty() {
        return Ok(());
    }
    store.zero_grad();
    store.accumulate(bound, grads);
    adam.step(store)?;
    Ok(())
}

/// Segments `Q x N` of `x` along the batch axis, for inspection.
pub fn batch_segments<T: Real>(x: &ArrayD<T>) -> Vec<Array2<f64>> {
    x.axis_iter(Axis(0))
        .map(|s| {
            let sh = s.shape();
            Array2::from_shape_fn((sh[0], sh[1]), |(q, n)| s[[q, n]].as_f64())
        })
        .collect()
}
