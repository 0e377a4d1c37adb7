//! Training losses of every formulation as functions of network outputs.
//!
//! Discriminator and classifier outputs enter in the log domain: `log D` for
//! sigmoid discriminators, log-probabilities for classifiers, raw scores for
//! the Wasserstein critic. Expectations are batch means.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::Rng;
use vclab_autodiff::{Real, Tape, Var};

use crate::config::{Formulation, LossWeights};
use crate::error::{Result, VclabError};
use crate::nets::one_hot;

/// Probability floor (and ceiling `1 - ADV_EPS`) for adversarial terms.
pub const ADV_EPS: f64 = 1e-7;
/// Probability floor for domain classification terms.
pub const CLS_EPS: f64 = 1e-12;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// Number of probabilities clamped so far in this process.
pub fn clamp_count() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

fn note_clamped(n: usize) {
    if n > 0 {
        let total = CLAMPED.fetch_add(n, Ordering::Relaxed) + n;
        log::warn!("clamped {n} probabilities ({total} so far)");
    }
}

fn clamp_log<'t, T: Real>(log_p: Var<'t, T>, lo: f64, hi: f64) -> Var<'t, T> {
    let (v, n) = log_p.clamp_pass_through(lo.ln(), hi.ln());
    note_clamped(n);
    v
}

/// Generator adversarial loss variant for sigmoid discriminators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenAdv {
    /// `E[log(1 - D(G(x)))]`
    Saturating,
    /// `-E[log D(G(x))]`
    NonSaturating,
}

impl GenAdv {
    pub fn from_flag(non_saturating: bool) -> Self {
        if non_saturating {
            GenAdv::NonSaturating
        } else {
            GenAdv::Saturating
        }
    }
}

/// Loss of a discriminating player and of the generator it plays against.
pub struct AdvLosses<'t, T: Real> {
    pub disc: Var<'t, T>,
    pub gen: Var<'t, T>,
}

fn sigmoid_disc_losses<'t, T: Real>(real_log_d: Var<'t, T>, fake_log_d: Var<'t, T>, form: GenAdv) -> AdvLosses<'t, T> {
    let real = clamp_log(real_log_d, ADV_EPS, 1.0 - ADV_EPS);
    let fake = clamp_log(fake_log_d, ADV_EPS, 1.0 - ADV_EPS);
    AdvLosses { disc: -real.mean() - fake.log1m_exp().mean(), gen: gen_from_clamped(fake, form) }
}

fn gen_from_clamped<'t, T: Real>(fake: Var<'t, T>, form: GenAdv) -> Var<'t, T> {
    match form {
        GenAdv::Saturating => fake.log1m_exp().mean(),
        GenAdv::NonSaturating => -fake.mean(),
    }
}

/// Generator side of a sigmoid discriminator game, from `log D(G(x))`.
pub fn sigmoid_generator_loss<'t, T: Real>(fake_log_d: Var<'t, T>, form: GenAdv) -> Var<'t, T> {
    gen_from_clamped(clamp_log(fake_log_d, ADV_EPS, 1.0 - ADV_EPS), form)
}

pub struct CycleAdvLosses<'t, T: Real> {
    pub d_y: Var<'t, T>,
    pub g: Var<'t, T>,
    pub d_x: Var<'t, T>,
    pub f: Var<'t, T>,
}

/// Cross-entropy losses of the two CycleGAN discriminators and mappings.
/// Arguments are `(B,)` values of `log D_Y(y)`, `log D_Y(G(x))`,
/// `log D_X(x)` and `log D_X(F(y))`.
pub fn cyclegan_adv_losses<'t, T: Real>(
    dy_real: Var<'t, T>,
    dy_fake: Var<'t, T>,
    dx_real: Var<'t, T>,
    dx_fake: Var<'t, T>,
    form: GenAdv,
) -> CycleAdvLosses<'t, T> {
    let y = sigmoid_disc_losses(dy_real, dy_fake, form);
    let x = sigmoid_disc_losses(dx_real, dx_fake, form);
    CycleAdvLosses { d_y: y.disc, g: y.gen, d_x: x.disc, f: x.gen }
}

/// Conditional-discriminator losses; `real_log_d` holds `log D(y, k)` and
/// `fake_log_d` holds `log D(G(x, k), k)`.
pub fn cstargan_adv_losses<'t, T: Real>(real_log_d: Var<'t, T>, fake_log_d: Var<'t, T>, form: GenAdv) -> AdvLosses<'t, T> {
    sigmoid_disc_losses(real_log_d, fake_log_d, form)
}

/// Mean `rho`-th power of the elementwise difference.
pub fn rho_distance<'t, T: Real>(a: Var<'t, T>, b: Var<'t, T>, rho: f64) -> Result<Var<'t, T>> {
    if a.shape() != b.shape() {
        return Err(VclabError::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let d = (a - b).abs();
    let p = if rho == 1.0 {
        d
    } else if rho == 2.0 {
        d.square()
    } else {
        d.powf(T::lit(rho))
    };
    Ok(p.mean())
}

/// `E ||recon - x||_rho^rho`, normalized by element count.
pub fn cycle_consistency_loss<'t, T: Real>(recon: Var<'t, T>, x: Var<'t, T>, rho: f64) -> Result<Var<'t, T>> {
    rho_distance(recon, x, rho)
}

/// `E ||G(x, k') - x||_rho^rho` for `x` from domain `k'`.
pub fn identity_mapping_loss<'t, T: Real>(mapped: Var<'t, T>, x: Var<'t, T>, rho: f64) -> Result<Var<'t, T>> {
    rho_distance(mapped, x, rho)
}

/// Mean of `log_probs[b, labels[b]]`, clamped below at `eps`.
fn mean_log_prob<'t, T: Real>(log_probs: Var<'t, T>, labels: &[usize], eps: f64) -> Result<Var<'t, T>> {
    let s = log_probs.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(VclabError::Shape(format!("log-probabilities {s:?} for {} labels", labels.len())));
    }
    let mask: ArrayD<T> = one_hot(labels, s[1])?;
    let clamped = clamp_log(log_probs, eps, 1.0);
    Ok(clamped.mask(mask).sum().scale(1.0 / labels.len() as f64))
}

/// `-E[log p(label | y)]`, the domain classification loss.
pub fn class_nll<'t, T: Real>(log_probs: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    Ok(-mean_log_prob(log_probs, labels, CLS_EPS)?)
}

pub struct ClsLosses<'t, T: Real> {
    pub classifier: Var<'t, T>,
    pub generator: Var<'t, T>,
}

/// Classifier loss on real samples and generator loss on converted ones.
pub fn domain_classification_losses<'t, T: Real>(
    real_log_probs: Var<'t, T>,
    real_labels: &[usize],
    fake_log_probs: Var<'t, T>,
    target_labels: &[usize],
) -> Result<ClsLosses<'t, T>> {
    Ok(ClsLosses {
        classifier: class_nll(real_log_probs, real_labels)?,
        generator: class_nll(fake_log_probs, target_labels)?,
    })
}

pub struct WLosses<'t, T: Real> {
    /// `-lambda_adv E[D(G(x, k))]`
    pub g_adv: Var<'t, T>,
    pub i_d: Var<'t, T>,
    pub i_c: Var<'t, T>,
}

/// `E[D(real)] - E[D(fake)]`, the critic's distance estimate.
pub fn wasserstein_estimate<'t, T: Real>(real_scores: Var<'t, T>, fake_scores: Var<'t, T>) -> Var<'t, T> {
    real_scores.mean() - fake_scores.mean()
}

/// Weighted W-StarGAN critic, classifier and generator-adversarial terms.
pub fn wstargan_losses<'t, T: Real>(
    real_scores: Var<'t, T>,
    fake_scores: Var<'t, T>,
    penalty: Var<'t, T>,
    cls_c: Var<'t, T>,
    w: &LossWeights,
) -> WLosses<'t, T> {
    WLosses {
        g_adv: fake_scores.mean().scale(-w.lambda_adv),
        i_d: (-wasserstein_estimate(real_scores, fake_scores)).scale(w.lambda_adv) + penalty.scale(w.lambda_gp),
        i_c: cls_c.scale(w.lambda_cls),
    }
}

/// `E[(||grad D(x_hat)||_2 - 1)^2]` with `x_hat` on the segment between a
/// real sample and a generated one.
///
/// The fake batch is shuffled with `rng` and paired with the real batch by
/// position; each pair gets its own mixing weight. `critic` maps `(B, ..)`
/// inputs to `(B,)` scores. The penalty is recorded on the tape so its
/// gradient reaches the critic's parameters.
pub fn gradient_penalty<'t, T, R, F>(
    tape: &'t Tape<T>,
    real: &ArrayD<T>,
    fake: &ArrayD<T>,
    rng: &mut R,
    critic: F,
) -> Result<Var<'t, T>>
where
    T: Real,
    R: Rng + ?Sized,
    F: FnOnce(Var<'t, T>) -> Result<Var<'t, T>>,
{
    if real.shape() != fake.shape() || real.ndim() < 2 {
        return Err(VclabError::Shape(format!("real {:?} vs fake {:?}", real.shape(), fake.shape())));
    }
    let b = real.shape()[0];
    let mut order: Vec<usize> = (0..b).collect();
    order.shuffle(rng);
    let mut x_hat = real.clone();
    for (i, &j) in order.iter().enumerate() {
        let eps = T::lit(rng.random::<f64>());
        let mut row = x_hat.index_axis_mut(ndarray::Axis(0), i);
        row.zip_mut_with(&fake.index_axis(ndarray::Axis(0), j), |r, &f| *r = eps * *r + (T::one() - eps) * f);
    }
    let x_hat = tape.var(x_hat);
    let scores = critic(x_hat)?;
    let grads = scores.sum().backward_with_graph()?;
    let g = grads.get(x_hat).unwrap_or_else(|| tape.constant(ArrayD::zeros(x_hat.shape())));
    let gv = g.value();
    for (i, sample) in gv.outer_iter().enumerate() {
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(VclabError::Invalid(format!("critic gradient is not finite at sample {i}")));
        }
    }
    let axes: Vec<usize> = (1..g.shape().len()).collect();
    let norms = g.square().sum_axes(&axes).reshape(&[b]).sqrt();
    Ok(norms.offset(-1.0).square().mean())
}

fn augmented_losses<'t, T: Real>(
    real_log_probs: Var<'t, T>,
    real_labels: &[usize],
    fake_log_probs: Var<'t, T>,
    target_labels: &[usize],
    fake_class: impl Fn(usize) -> usize,
) -> Result<AdvLosses<'t, T>> {
    let fake_labels: Vec<usize> = target_labels.iter().map(|&k| fake_class(k)).collect();
    let fake_as_fake = mean_log_prob(fake_log_probs, &fake_labels, ADV_EPS)?;
    let fake_as_real = mean_log_prob(fake_log_probs, target_labels, ADV_EPS)?;
    Ok(AdvLosses {
        disc: -mean_log_prob(real_log_probs, real_labels, ADV_EPS)? - fake_as_fake,
        gen: -fake_as_real + fake_as_fake,
    })
}

/// Generator side of either augmented game, from the `(B, 2K)` or
/// `(B, K + 1)` log-probabilities of converted samples.
pub fn augmented_generator_loss<'t, T: Real>(
    fake_log_probs: Var<'t, T>,
    target_labels: &[usize],
    domains: usize,
) -> Result<Var<'t, T>> {
    let l = fake_log_probs.shape()[1];
    let fake_labels: Vec<usize> = if l == 2 * domains {
        target_labels.iter().map(|&k| domains + k).collect()
    } else if l == domains + 1 {
        vec![domains; target_labels.len()]
    } else {
        return Err(VclabError::Shape(format!("{l} classes for {domains} domains")));
    };
    let fake_as_fake = mean_log_prob(fake_log_probs, &fake_labels, ADV_EPS)?;
    Ok(-mean_log_prob(fake_log_probs, target_labels, ADV_EPS)? + fake_as_fake)
}

/// Augmented classifier with K real and K fake classes; `log_probs` are
/// `(B, 2K)`, labels are 0-based real classes.
pub fn astargan1_losses<'t, T: Real>(
    real_log_probs: Var<'t, T>,
    real_labels: &[usize],
    fake_log_probs: Var<'t, T>,
    target_labels: &[usize],
) -> Result<AdvLosses<'t, T>> {
    let k = half_classes(fake_log_probs)?;
    augmented_losses(real_log_probs, real_labels, fake_log_probs, target_labels, |t| k + t)
}

/// Augmented classifier with K real classes and one fake class; `log_probs`
/// are `(B, K + 1)`.
pub fn astargan2_losses<'t, T: Real>(
    real_log_probs: Var<'t, T>,
    real_labels: &[usize],
    fake_log_probs: Var<'t, T>,
    target_labels: &[usize],
) -> Result<AdvLosses<'t, T>> {
    let k = fake_log_probs.shape()[1] - 1;
    augmented_losses(real_log_probs, real_labels, fake_log_probs, target_labels, |_| k)
}

fn half_classes<T: Real>(log_probs: Var<'_, T>) -> Result<usize> {
    let l = log_probs.shape()[1];
    if !l.is_multiple_of(2) {
        return Err(VclabError::Shape(format!("augmented classifier needs 2K outputs, got {l}")));
    }
    Ok(l / 2)
}

/// Unweighted loss terms feeding [`full_objectives`]. Which fields are
/// required depends on the formulation.
#[derive(Clone, Copy)]
pub struct Components<'t, T: Real> {
    /// Adversarial loss of G (for W-StarGAN: `-E[D(G(x, k))]`).
    pub g_adv: Option<Var<'t, T>>,
    /// Adversarial loss of F (CycleGAN only).
    pub f_adv: Option<Var<'t, T>>,
    /// Discriminator or augmented-classifier loss (for W-StarGAN:
    /// `E[D(fake)] - E[D(real)]`; for CycleGAN: D_Y's loss).
    pub d_adv: Option<Var<'t, T>>,
    /// D_X's loss (CycleGAN only).
    pub d_adv_x: Option<Var<'t, T>>,
    pub cls_g: Option<Var<'t, T>>,
    pub cls_c: Option<Var<'t, T>>,
    pub cyc: Option<Var<'t, T>>,
    pub id: Option<Var<'t, T>>,
    pub gp: Option<Var<'t, T>>,
}

impl<T: Real> Default for Components<'_, T> {
    fn default() -> Self {
        Components { g_adv: None, f_adv: None, d_adv: None, d_adv_x: None, cls_g: None, cls_c: None, cyc: None, id: None, gp: None }
    }
}

pub struct Objectives<'t, T: Real> {
    pub generator: Var<'t, T>,
    /// `I_D`, or `I_A` for the augmented formulations.
    pub discriminator: Var<'t, T>,
    pub classifier: Option<Var<'t, T>>,
}

fn need<'t, T: Real>(v: Option<Var<'t, T>>, name: &str) -> Result<Var<'t, T>> {
    v.ok_or_else(|| VclabError::Invalid(format!("missing loss component `{name}`")))
}

/// `I_G` (for CycleGAN the joint objective of G and F).
pub fn generator_objective<'t, T: Real>(f: Formulation, w: &LossWeights, c: &Components<'t, T>) -> Result<Var<'t, T>> {
    let base = need(c.g_adv, "g_adv")?.scale(w.lambda_adv)
        + need(c.cyc, "cyc")?.scale(w.lambda_cyc)
        + need(c.id, "id")?.scale(w.lambda_id);
    Ok(match f {
        Formulation::CycleGan => base + need(c.f_adv, "f_adv")?.scale(w.lambda_adv),
        Formulation::CStarGan | Formulation::WStarGan => base + need(c.cls_g, "cls_g")?.scale(w.lambda_cls),
        Formulation::AStarGan1 | Formulation::AStarGan2 => base,
    })
}

/// `I_D` (or `I_A`) and `I_C` where the formulation has one.
pub fn adversary_objectives<'t, T: Real>(
    f: Formulation,
    w: &LossWeights,
    c: &Components<'t, T>,
) -> Result<(Var<'t, T>, Option<Var<'t, T>>)> {
    let d_adv = need(c.d_adv, "d_adv")?;
    Ok(match f {
        Formulation::CycleGan => (d_adv + need(c.d_adv_x, "d_adv_x")?, None),
        Formulation::CStarGan => (d_adv.scale(w.lambda_adv), Some(need(c.cls_c, "cls_c")?.scale(w.lambda_cls))),
        Formulation::WStarGan => (
            d_adv.scale(w.lambda_adv) + need(c.gp, "gp")?.scale(w.lambda_gp),
            Some(need(c.cls_c, "cls_c")?.scale(w.lambda_cls)),
        ),
        Formulation::AStarGan1 | Formulation::AStarGan2 => (d_adv.scale(w.lambda_adv), None),
    })
}

/// Weighted full objectives of each formulation.
pub fn full_objectives<'t, T: Real>(f: Formulation, w: &LossWeights, c: Components<'t, T>) -> Result<Objectives<'t, T>> {
    let generator = generator_objective(f, w, &c)?;
    let (discriminator, classifier) = adversary_objectives(f, w, &c)?;
    Ok(Objectives { generator, discriminator, classifier })
}
