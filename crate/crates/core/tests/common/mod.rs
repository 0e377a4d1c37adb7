#![allow(dead_code)]

use ndarray::{Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vclab::autodiff::{Bound, ParamStore, Tape, Var};
use vclab::config::{Formulation, Preset, TrainConfig};
use vclab::features::{synth_toy_corpus, DomainCorpus, ToyOptions};
use vclab::nets::{one_hot, Classifier, Generator, MultiTaskDiscriminator, PatchDiscriminator};
use vclab::objectives::*;

pub const Q: usize = 4;
pub const N: usize = 8;
pub const B: usize = 3;
pub const K: usize = 3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_batch(rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_fn(vec![B, Q, N], |_| rng.random_range(-1.5..1.5))
}

/// Central-difference check of the gradient of `f` with respect to `samples`
/// randomly chosen entries of the parameters of `store` whose names pass
/// `select`. Returns the largest relative error, with magnitudes below
/// `1e-6` counted as `1e-6`.
pub fn param_fd_check<F>(store: &mut ParamStore<f64>, samples: usize, seed: u64, select: fn(&str) -> bool, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape, true);
    let grads = f(&tape, &bound).backward().expect("backward");
    store.zero_grad();
    store.accumulate(&bound, &grads);
    drop(grads);
    drop(bound);

    let eval = |store: &ParamStore<f64>| {
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        f(&tape, &bound).item()
    };
    let mut r = rng(seed);
    let ids: Vec<_> = store
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.value.is_empty() && select(&p.name))
        .map(|(i, _)| i)
        .collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let pi = ids[r.random_range(0..ids.len())];
        let id = store.find(&store.iter().nth(pi).unwrap().name.clone()).unwrap();
        let j = r.random_range(0..store.get(id).value.len());
        let analytic = store.get(id).grad.as_slice_memory_order().unwrap()[j];
        let base = store.get(id).value.as_slice_memory_order().unwrap()[j];
        store.get_mut(id).value.as_slice_memory_order_mut().unwrap()[j] = base + h;
        let plus = eval(store);
        store.get_mut(id).value.as_slice_memory_order_mut().unwrap()[j] = base - h;
        let minus = eval(store);
        store.get_mut(id).value.as_slice_memory_order_mut().unwrap()[j] = base;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

/// Tiny networks of every kind in one store.
pub struct TinyNets {
    pub store: ParamStore<f64>,
    pub g: Generator,
    pub g_uncond: Generator,
    pub d: PatchDiscriminator,
    pub d_uncond: PatchDiscriminator,
    pub c: Classifier,
    pub a1: Classifier,
    pub a2: Classifier,
    pub dc: MultiTaskDiscriminator,
    pub x: ArrayD<f64>,
    pub y: ArrayD<f64>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl TinyNets {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let kind = vclab::config::GeneratorKind::OneD;
        let g = Generator::new(&mut store, &mut r, "g", kind, Q, K, [4, 4, 4]).unwrap();
        let g_uncond = Generator::new(&mut store, &mut r, "f", kind, Q, 0, [4, 4, 4]).unwrap();
        let d = PatchDiscriminator::new(&mut store, &mut r, "d", Q, K, 3, 0.0);
        let d_uncond = PatchDiscriminator::new(&mut store, &mut r, "dx", Q, 0, 3, 0.0);
        let c = Classifier::new(&mut store, &mut r, "c", Q, K, 3, 0.0);
        let a1 = Classifier::new(&mut store, &mut r, "a1", Q, 2 * K, 3, 0.0);
        let a2 = Classifier::new(&mut store, &mut r, "a2", Q, K + 1, 3, 0.0);
        let dc = MultiTaskDiscriminator::new(&mut store, &mut r, "dc", Q, K, [3, 3, 3, 3], 0.0);
        let x = random_batch(&mut r);
        let y = random_batch(&mut r);
        TinyNets { store, g, g_uncond, d, d_uncond, c, a1, a2, dc, x, y, source: vec![0, 1, 2], target: vec![2, 0, 1] }
    }
}

/// Every loss term with its gradient-check error, on freshly built tiny
/// networks.
pub fn objective_gradient_errors(samples: usize) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut nets = TinyNets::new(3);
    let TinyNets { store, g, g_uncond, d, d_uncond, c, a1, a2, dc, x, y, source, target } = &mut nets;
    let (x, y, source, target) = (&*x, &*y, &*source, &*target);
    let (g, g_uncond, d, d_uncond, c, a1, a2, dc) = (&*g, &*g_uncond, &*d, &*d_uncond, &*c, &*a1, &*a2, &*dc);

    macro_rules! check {
        ($name:expr, |$tape:ident, $p:ident| $body:expr) => {
            check!($name, any, |$tape, $p| $body)
        };
        ($name:expr, $select:expr, |$tape:ident, $p:ident| $body:expr) => {{
            let err = param_fd_check(store, samples, out.len() as u64, $select, |$tape, $p| $body);
            out.push(($name.to_string(), err));
        }};
    }

    for form in [GenAdv::Saturating, GenAdv::NonSaturating] {
        let tag = if form == GenAdv::Saturating { "saturating" } else { "non-saturating" };
        for which in 0..4 {
            let name = ["cyclegan d_y", "cyclegan g", "cyclegan d_x", "cyclegan f"][which];
            check!(format!("{name} ({tag})"), |tape, p| {
                let xv = tape.constant(x.clone());
                let yv = tape.constant(y.clone());
                let gx = g_uncond.forward(p, xv, None).unwrap();
                let fy = g_uncond.forward(p, yv, None).unwrap();
                let l = cyclegan_adv_losses(
                    d_uncond.forward(p, yv, None, None).unwrap().log_d,
                    d_uncond.forward(p, gx, None, None).unwrap().log_d,
                    d_uncond.forward(p, xv, None, None).unwrap().log_d,
                    d_uncond.forward(p, fy, None, None).unwrap().log_d,
                    form,
                );
                [l.d_y, l.g, l.d_x, l.f][which]
            });
        }
        for which in 0..2 {
            check!(format!("c-stargan {} ({tag})", ["d", "g"][which]), |tape, p| {
                let ct = cond(tape, target);
                let fake = g.forward(p, tape.constant(x.clone()), Some(ct)).unwrap();
                let l = cstargan_adv_losses(
                    d.forward(p, tape.constant(y.clone()), Some(cond(tape, source)), None).unwrap().log_d,
                    d.forward(p, fake, Some(ct), None).unwrap().log_d,
                    form,
                );
                [l.disc, l.gen][which]
            });
        }
    }

    for rho in [1.0, 2.0] {
        check!(format!("cycle consistency (rho {rho})"), |tape, p| {
            let xv = tape.constant(x.clone());
            let fake = g.forward(p, xv, Some(cond(tape, target))).unwrap();
            let back = g.forward(p, fake, Some(cond(tape, source))).unwrap();
            cycle_consistency_loss(back, xv, rho).unwrap()
        });
        check!(format!("identity mapping (rho {rho})"), |tape, p| {
            let xv = tape.constant(x.clone());
            identity_mapping_loss(g.forward(p, xv, Some(cond(tape, source))).unwrap(), xv, rho).unwrap()
        });
    }

    for which in 0..2 {
        check!(format!("domain classification {}", ["classifier", "generator"][which]), |tape, p| {
            let fake = g.forward(p, tape.constant(x.clone()), Some(cond(tape, target))).unwrap();
            let l = domain_classification_losses(
                c.forward(p, tape.constant(y.clone()), None).unwrap().log_probs,
                source,
                c.forward(p, fake, None).unwrap().log_probs,
                target,
            )
            .unwrap();
            [l.classifier, l.generator][which]
        });
    }

    check!("gradient penalty", adversary, |tape, p| {
        let fake = g.forward(p, tape.constant(x.clone()), Some(cond(tape, target))).unwrap();
        let fake_v = (*fake.value()).clone();
        let mut r = rng(11);
        gradient_penalty(tape, y, &fake_v, &mut r, |xh| Ok(dc.forward(p, xh, None)?.score)).unwrap()
    });
    let w = vclab::config::LossWeights::for_formulation(Formulation::WStarGan);
    for which in 0..3 {
        let select = if which == 0 { generator } else { adversary };
        check!(format!("w-stargan {}", ["g_adv", "critic", "classifier"][which]), select, |tape, p| {
            let fake = g.forward(p, tape.constant(x.clone()), Some(cond(tape, target))).unwrap();
            let real_out = dc.forward(p, tape.constant(y.clone()), None).unwrap();
            let fake_out = dc.forward(p, fake, None).unwrap();
            let fake_v = (*fake.value()).clone();
            let mut r = rng(12);
            let gp = gradient_penalty(tape, y, &fake_v, &mut r, |xh| Ok(dc.forward(p, xh, None)?.score)).unwrap();
            let cls = class_nll(real_out.class_log_probs, source).unwrap();
            let l = wstargan_losses(real_out.score, fake_out.score, gp, cls, &w);
            [l.g_adv, l.i_d, l.i_c][which]
        });
    }

    for (variant, a) in [("a-stargan1", a1), ("a-stargan2", a2)] {
        for which in 0..3 {
            check!(format!("{variant} {}", ["classifier", "generator", "generator (standalone)"][which]), |tape, p| {
                let fake = g.forward(p, tape.constant(x.clone()), Some(cond(tape, target))).unwrap();
                let real_lp = a.forward(p, tape.constant(y.clone()), None).unwrap().log_probs;
                let fake_lp = a.forward(p, fake, None).unwrap().log_probs;
                if which == 2 {
                    return augmented_generator_loss(fake_lp, target, K).unwrap();
                }
                let l = if variant == "a-stargan1" {
                    astargan1_losses(real_lp, source, fake_lp, target).unwrap()
                } else {
                    astargan2_losses(real_lp, source, fake_lp, target).unwrap()
                };
                [l.disc, l.gen][which]
            });
        }
    }

    for f in Formulation::ALL {
        let weights = vclab::config::LossWeights::for_formulation(f);
        for which in 0..3 {
            if which == 2 && !matches!(f, Formulation::CStarGan | Formulation::WStarGan) {
                continue;
            }
            let select = if which == 0 { generator } else { adversary };
            check!(format!("{} full objective {}", f.name(), ["generator", "adversary", "classifier"][which]), select, |tape, p| {
                let comps = full_components(tape, p, f, x, y, source, target, g, g_uncond, d, d_uncond, c, a1, a2, dc);
                let o = full_objectives(f, &weights, comps).unwrap();
                [o.generator, o.discriminator, o.classifier.unwrap_or(o.generator)][which]
            });
        }
    }
    out
}

fn any(_: &str) -> bool {
    true
}

fn generator(name: &str) -> bool {
    name.starts_with("g.") || name.starts_with("f.")
}

fn adversary(name: &str) -> bool {
    !generator(name)
}

fn cond<'t>(tape: &'t Tape<f64>, labels: &[usize]) -> Var<'t, f64> {
    tape.constant(one_hot(labels, K).unwrap())
}

#[allow(clippy::too_many_arguments)]
fn full_components<'t>(
    tape: &'t Tape<f64>,
    p: &Bound<'t, f64>,
    f: Formulation,
    x: &ArrayD<f64>,
    y: &ArrayD<f64>,
    source: &[usize],
    target: &[usize],
    g: &Generator,
    g_uncond: &Generator,
    d: &PatchDiscriminator,
    d_uncond: &PatchDiscriminator,
    c: &Classifier,
    a1: &Classifier,
    a2: &Classifier,
    dc: &MultiTaskDiscriminator,
) -> Components<'t, f64> {
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let ct = tape.constant(one_hot(target, K).unwrap());
    let cs = tape.constant(one_hot(source, K).unwrap());
    let form = GenAdv::NonSaturating;
    if f == Formulation::CycleGan {
        let gx = g_uncond.forward(p, xv, None).unwrap();
        let fy = g_uncond.forward(p, yv, None).unwrap();
        let l = cyclegan_adv_losses(
            d_uncond.forward(p, yv, None, None).unwrap().log_d,
            d_uncond.forward(p, gx, None, None).unwrap().log_d,
            d_uncond.forward(p, xv, None, None).unwrap().log_d,
            d_uncond.forward(p, fy, None, None).unwrap().log_d,
            form,
        );
        let cyc = cycle_consistency_loss(g_uncond.forward(p, gx, None).unwrap(), xv, 1.0).unwrap();
        let id = identity_mapping_loss(g_uncond.forward(p, yv, None).unwrap(), yv, 1.0).unwrap();
        return Components {
            g_adv: Some(l.g),
            f_adv: Some(l.f),
            d_adv: Some(l.d_y),
            d_adv_x: Some(l.d_x),
            cyc: Some(cyc),
            id: Some(id),
            ..Components::default()
        };
    }
    let fake = g.forward(p, xv, Some(ct)).unwrap();
    let cyc = cycle_consistency_loss(g.forward(p, fake, Some(cs)).unwrap(), xv, 1.0).unwrap();
    let id = identity_mapping_loss(g.forward(p, xv, Some(cs)).unwrap(), xv, 1.0).unwrap();
    let mut comps = Components { cyc: Some(cyc), id: Some(id), ..Components::default() };
    match f {
        Formulation::CStarGan => {
            let l = cstargan_adv_losses(
                d.forward(p, yv, Some(cs), None).unwrap().log_d,
                d.forward(p, fake, Some(ct), None).unwrap().log_d,
                form,
            );
            let cl = domain_classification_losses(
                c.forward(p, yv, None).unwrap().log_probs,
                source,
                c.forward(p, fake, None).unwrap().log_probs,
                target,
            )
            .unwrap();
            comps.g_adv = Some(l.gen);
            comps.d_adv = Some(l.disc);
            comps.cls_g = Some(cl.generator);
            comps.cls_c = Some(cl.classifier);
        }
        Formulation::WStarGan => {
            let real_out = dc.forward(p, yv, None).unwrap();
            let fake_out = dc.forward(p, fake, None).unwrap();
            let fake_v = (*fake.value()).clone();
            let mut r = rng(13);
            let gp = gradient_penalty(tape, y, &fake_v, &mut r, |xh| Ok(dc.forward(p, xh, None)?.score)).unwrap();
            comps.g_adv = Some(-fake_out.score.mean());
            comps.d_adv = Some(-wasserstein_estimate(real_out.score, fake_out.score));
            comps.gp = Some(gp);
            comps.cls_c = Some(class_nll(real_out.class_log_probs, source).unwrap());
            comps.cls_g = Some(class_nll(fake_out.class_log_probs, target).unwrap());
        }
        Formulation::AStarGan1 | Formulation::AStarGan2 => {
            let a = if f == Formulation::AStarGan1 { a1 } else { a2 };
            let real_lp = a.forward(p, yv, None).unwrap().log_probs;
            let fake_lp = a.forward(p, fake, None).unwrap().log_probs;
            let l = if f == Formulation::AStarGan1 {
                astargan1_losses(real_lp, source, fake_lp, target).unwrap()
            } else {
                astargan2_losses(real_lp, source, fake_lp, target).unwrap()
            };
            comps.g_adv = Some(l.gen);
            comps.d_adv = Some(l.disc);
        }
        Formulation::CycleGan => unreachable!(),
    }
    comps
}

/// A small toy corpus and a configuration with tiny networks that trains in
/// milliseconds per step.
pub fn small_setup(f: Formulation) -> (DomainCorpus, TrainConfig) {
    let toy = synth_toy_corpus(3, 4, 4, 16, 5, ToyOptions::default()).unwrap();
    let mut cfg = TrainConfig::defaults(f, Preset::Tiny);
    cfg.batch_size = 4;
    cfg.segment_frames = 8;
    cfg.iterations = 5;
    cfg.nets.generator_widths = [4, 4, 4];
    cfg.nets.discriminator_width = 3;
    cfg.nets.classifier_width = 3;
    cfg.nets.augmented_width = 3;
    cfg.nets.multitask_widths = [3, 3, 3, 3];
    if f == Formulation::CycleGan {
        cfg.domain_pair = Some((0, 1));
    }
    (toy.corpus, cfg)
}

pub fn store_snapshot(store: &ParamStore<f64>) -> Vec<ArrayD<f64>> {
    store.iter().map(|p| p.value.clone()).collect()
}

pub fn matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Minimum-total DTW by enumerating every monotone path with steps (1,0),
/// (0,1), (1,1); ties go to the shorter path. Totals accumulate in path
/// order. Returns (total, length).
pub fn dtw_brute_force(cost: &Array2<f64>) -> (f64, usize) {
    fn walk(cost: &Array2<f64>, i: usize, j: usize, total: f64, len: usize, best: &mut (f64, usize)) {
        let total = total + cost[[i, j]];
        let len = len + 1;
        let (n, m) = cost.dim();
        if i == n - 1 && j == m - 1 {
            if total < best.0 || (total == best.0 && len < best.1) {
                *best = (total, len);
            }
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(cost, i + 1, j + 1, total, len, best);
        }
        if i + 1 < n {
            walk(cost, i + 1, j, total, len, best);
        }
        if j + 1 < m {
            walk(cost, i, j + 1, total, len, best);
        }
    }
    let mut best = (f64::INFINITY, usize::MAX);
    walk(cost, 0, 0, 0.0, 0, &mut best);
    best
}

/// Compares `dtw_mcd` with [`dtw_brute_force`] on `pairs` random sequence
/// pairs of lengths 1..=6. Returns the number of pairs that differ in any
/// bit of the mean or the total.
pub fn dtw_mismatches(pairs: usize, seed: u64) -> usize {
    use vclab::eval::{dtw_mcd, mcd_frame};
    use vclab::features::FeatureSequence;
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..pairs {
        let q = r.random_range(2..5);
        let (n, m) = (r.random_range(1..=6), r.random_range(1..=6));
        let a = FeatureSequence::new(matrix(q, n, &mut r, -2.0, 2.0), 5.0).unwrap();
        let b = FeatureSequence::new(matrix(q, m, &mut r, -2.0, 2.0), 5.0).unwrap();
        let cost = Array2::from_shape_fn((n, m), |(i, j)| mcd_frame(a.data.column(i), b.data.column(j)).unwrap());
        let (total, len) = dtw_brute_force(&cost);
        let got = dtw_mcd(&a, &b).unwrap();
        let mean = total / len as f64;
        if got.total_db.to_bits() != total.to_bits() || got.mean_db.to_bits() != mean.to_bits() || got.path.len() != len {
            bad += 1;
        }
    }
    bad
}

/// Largest deviation found by the conversion-pipeline checks: statistics
/// of post-processed output against the target, normalize/denormalize and
/// pad/crop round trips, and F0 conversion with equal statistics.
pub fn pipeline_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use vclab::features::*;
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..20 {
        let q = r.random_range(2..10);
        let n = r.random_range(5..50);
        let utts: Vec<FeatureSequence> = (0..3)
            .map(|_| {
                let f0: Vec<f64> = (0..n).map(|_| if r.random_bool(0.8) { r.random_range(80.0..300.0) } else { 0.0 }).collect();
                let mut data = matrix(q, n, &mut r, -3.0, 3.0);
                data.mapv_inplace(|v| v * 2.0 + 1.0);
                FeatureSequence::new(data, 5.0).unwrap().with_f0(f0).unwrap()
            })
            .collect();
        let stats = compute_stats(&utts).unwrap();
        let y = FeatureSequence::new(matrix(q, n, &mut r, -1.0, 4.0), 5.0).unwrap().with_f0(utts[0].f0.clone().unwrap()).unwrap();
        let out = convert_postprocess(&y, &stats).unwrap();
        let got = compute_stats(std::slice::from_ref(&out)).unwrap();
        for k in 0..q {
            worst[0] = worst[0].max((got.psi[k] - stats.psi[k]).abs()).max((got.zeta[k] - stats.zeta[k]).abs());
        }
        let x = &utts[1];
        let back = denormalize(&normalize(x, &stats).unwrap(), &stats).unwrap();
        worst[1] = worst[1].max((&back.data - &x.data).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
        let (padded, len) = pad_to_multiple(x, 4);
        let cropped = crop(&padded, len);
        worst[2] = worst[2].max(if cropped == *x && padded.len() % 4 == 0 { 0.0 } else { f64::INFINITY });
        let f0 = x.f0.clone().unwrap();
        let same = convert_f0(&f0, &stats, &stats).unwrap();
        for (a, b) in f0.iter().zip(&same) {
            let err = if *a == 0.0 { if *b == 0.0 { 0.0 } else { f64::INFINITY } } else { (a - b).abs() / a };
            worst[3] = worst[3].max(err);
        }
    }
    vec![
        ("post-processed statistics", worst[0]),
        ("normalize/denormalize round trip", worst[1]),
        ("pad/crop round trip", worst[2]),
        ("F0 conversion with equal statistics", worst[3]),
    ]
}
