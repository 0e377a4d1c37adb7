//! Trains one formulation on the Gaussian-domain toy corpus and reports how
//! often an independent frame classifier assigns converted frames to the
//! target domain. Accuracy is reported for conversions run as one mixed
//! batch and one utterance at a time; batch normalization makes them differ.
//!
//!     cargo run --release --example train_toy -- a-stargan1 2000 [overrides.json]
//!
//! The optional JSON file overrides configuration keys as `vclab train
//! --config` does.

use std::time::Instant;

use vclab::config::{Formulation, Preset, TrainConfig};
use vclab::experiments::{conversion_accuracy, frame_classifier, Batching};
use vclab::features::{synth_toy_corpus, ToyOptions};
use vclab::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let formulation: Formulation = args.next().as_deref().unwrap_or("a-stargan1").parse()?;
    let iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);

    let overrides = args.next().map(std::fs::read_to_string).transpose()?;

    let toy = synth_toy_corpus(4, 8, 20, 64, 1, ToyOptions::default())?;
    let mut cfg = match overrides {
        Some(json) => TrainConfig::from_json(formulation, Preset::Tiny, &json)?,
        None => TrainConfig::defaults(formulation, Preset::Tiny),
    };
    cfg.iterations = iterations;
    if formulation == Formulation::CycleGan {
        cfg.domain_pair = Some((0, 1));
    }
    let classifier = frame_classifier(&toy.corpus)?;
    let mut real = 0.0;
    for k in 0..toy.corpus.num_domains() {
        let utts = toy.corpus.normalized(k)?;
        real += utts.iter().map(|u| classifier.accuracy(&u.data, k)).sum::<f64>() / utts.len() as f64;
    }
    println!("classifier accuracy on real frames {:.3}", real / toy.corpus.num_domains() as f64);
    let mut trainer = Trainer::<f64>::new(cfg, &toy.corpus)?;
    let start = Instant::now();
    let every = (iterations / 10).max(1);
    while trainer.step < iterations {
        trainer.train_step()?;
        if trainer.step % every == 0 {
            let mixed = conversion_accuracy(&trainer.model, &toy.corpus, &classifier, 5, Batching::Mixed)?;
            let single = conversion_accuracy(&trainer.model, &toy.corpus, &classifier, 5, Batching::Single)?;
            let last = |t: &str| trainer.history.series(t).and_then(|s| s.last().copied()).unwrap_or(f64::NAN);
            println!(
                "step {:>6}  {:>6.1}s  accuracy {:.3} (one at a time {:.3})  g_adv {:.3}  d_total {:.3}  cyc {:.3}",
                trainer.step,
                start.elapsed().as_secs_f64(),
                mixed.overall,
                single.overall,
                last("g_adv"),
                last("d_total"),
                last("cyc")
            );
        }
    }
    Ok(())
}
