mod common;

use common::{small_setup, store_snapshot};
use vclab::checkpoint::Checkpoint;
use vclab::config::{Formulation, LossWeights};
use vclab::trainer::Trainer;

fn snapshot(t: &Trainer<f64>) -> Vec<Vec<ndarray::ArrayD<f64>>> {
    t.model.stores().iter().map(|(_, s)| store_snapshot(s)).collect()
}

fn total(losses: &[(&str, f64)], name: &str) -> f64 {
    losses.iter().find(|(n, _)| *n == name).map(|&(_, v)| v).unwrap()
}

#[test]
fn same_seed_gives_identical_history() {
    for f in Formulation::ALL {
        let (corpus, cfg) = small_setup(f);
        let mut a = Trainer::<f64>::new(cfg.clone(), &corpus).unwrap();
        let mut b = Trainer::<f64>::new(cfg, &corpus).unwrap();
        a.run(|_| Ok(())).unwrap();
        b.run(|_| Ok(())).unwrap();
        assert_eq!(a.history.len(), 5, "{f:?}");
        for term in a.history.terms() {
            let (x, y) = (a.history.series(term).unwrap(), b.history.series(term).unwrap());
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()), "{f:?} {term}");
        }
        assert_eq!(snapshot(&a), snapshot(&b));
    }
}

#[test]
fn zero_iterations_keeps_initialization() {
    for f in Formulation::ALL {
        let (corpus, mut cfg) = small_setup(f);
        cfg.iterations = 0;
        let init = Trainer::<f64>::new(cfg.clone(), &corpus).unwrap();
        let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
        t.run(|_| Ok(())).unwrap();
        assert_eq!(t.step, 0);
        assert!(t.history.is_empty());
        assert_eq!(snapshot(&t), snapshot(&init));
    }
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    for f in Formulation::ALL {
        if f == Formulation::CycleGan {
            continue;
        }
        let (corpus, mut cfg) = small_setup(f);
        cfg.weights = LossWeights { lambda_adv: 0.0, lambda_cls: 0.0, lambda_cyc: 0.0, lambda_id: 0.0, lambda_gp: 0.0, rho: 1.0 };
        let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
        let before = snapshot(&t);
        t.train_step().unwrap();
        assert_eq!(snapshot(&t), before, "{f:?}");
    }
}

#[test]
fn cyclegan_zero_weights_freeze_the_generators() {
    let (corpus, mut cfg) = small_setup(Formulation::CycleGan);
    cfg.weights = LossWeights { lambda_adv: 0.0, lambda_cls: 0.0, lambda_cyc: 0.0, lambda_id: 0.0, lambda_gp: 0.0, rho: 1.0 };
    let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
    let before = store_snapshot(&t.model.gen);
    t.train_step().unwrap();
    assert_eq!(store_snapshot(&t.model.gen), before);
}

#[test]
fn small_step_decreases_own_loss() {
    for f in Formulation::ALL {
        let (corpus, mut cfg) = small_setup(f);
        cfg.alpha_g = 1e-6;
        cfg.alpha_dc = 1e-6;
        let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
        let b = t.sample_batch(0);

        let before = t.adversary_losses(&b).unwrap();
        t.update_adversaries(&b).unwrap();
        let after = t.adversary_losses(&b).unwrap();
        let sum = |l: &[(&str, f64)]| total(l, "d_total") + l.iter().find(|(n, _)| *n == "c_total").map_or(0.0, |p| p.1);
        assert!(sum(&after) < sum(&before), "{f:?} adversaries {} -> {}", sum(&before), sum(&after));

        let before = total(&t.generator_losses(&b).unwrap(), "g_total");
        t.update_generator(&b).unwrap();
        let after = total(&t.generator_losses(&b).unwrap(), "g_total");
        assert!(after < before, "{f:?} generator {before} -> {after}");
    }
}

#[test]
fn updates_touch_only_their_player() {
    for f in Formulation::ALL {
        let (corpus, cfg) = small_setup(f);
        let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
        let b = t.sample_batch(0);

        let gen = store_snapshot(&t.model.gen);
        let adv = (store_snapshot(&t.model.disc), store_snapshot(&t.model.cls));
        t.update_adversaries(&b).unwrap();
        assert_eq!(store_snapshot(&t.model.gen), gen, "{f:?}");
        assert_ne!((store_snapshot(&t.model.disc), store_snapshot(&t.model.cls)), adv, "{f:?}");

        let adv = (store_snapshot(&t.model.disc), store_snapshot(&t.model.cls));
        t.update_generator(&b).unwrap();
        assert_eq!((store_snapshot(&t.model.disc), store_snapshot(&t.model.cls)), adv, "{f:?}");
        assert_ne!(store_snapshot(&t.model.gen), gen, "{f:?}");
    }
}

#[test]
fn resumed_run_matches_uninterrupted() {
    for f in Formulation::ALL {
        let (corpus, mut cfg) = small_setup(f);
        cfg.iterations = 6;
        let mut full = Trainer::<f64>::new(cfg.clone(), &corpus).unwrap();
        full.run(|_| Ok(())).unwrap();

        let mut part = Trainer::<f64>::new(cfg, &corpus).unwrap();
        for _ in 0..3 {
            part.train_step().unwrap();
        }
        let bytes = Checkpoint::capture(&part).to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed: Trainer<f64> = ck.resume(&corpus).unwrap();
        assert_eq!(resumed.step, 3);
        let next = resumed.train_step().unwrap();
        for (name, v) in next {
            assert_eq!(v.to_bits(), full.history.series(name).unwrap()[3].to_bits(), "{f:?} {name}");
        }
        resumed.run(|_| Ok(())).unwrap();
        assert_eq!(resumed.history, full.history, "{f:?}");
        assert_eq!(snapshot(&resumed), snapshot(&full), "{f:?}");
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (corpus, cfg) = small_setup(Formulation::AStarGan2);
    let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
    t.train_step().unwrap();
    let ck = Checkpoint::capture(&t);
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ck);
    let model = back.model::<f64>().unwrap();
    for ((_, a), (_, b)) in model.stores().iter().zip(t.model.stores().iter()) {
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p.value, q.value);
            assert_eq!(p.adam.m, q.adam.m);
            assert_eq!(p.adam.step, q.adam.step);
        }
    }
    let mut bad = ck.to_bytes().unwrap();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let full = ck.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&full[..full.len() - 1]).is_err());
}

#[test]
fn checkpoint_callback_follows_interval() {
    let (corpus, mut cfg) = small_setup(Formulation::CStarGan);
    cfg.iterations = 7;
    cfg.checkpoint_interval = 2;
    let mut t = Trainer::<f64>::new(cfg, &corpus).unwrap();
    let mut steps = Vec::new();
    t.run(|t| {
        steps.push(t.step);
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, vec![2, 4, 6]);
    assert_eq!(t.history.len(), 7);
}
