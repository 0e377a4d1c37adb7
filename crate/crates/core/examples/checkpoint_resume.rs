//! Interrupts a run, saves a checkpoint, resumes it and compares the loss
//! history with an uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume -- [formulation]

use vclab::checkpoint::Checkpoint;
use vclab::config::{Formulation, Preset, TrainConfig};
use vclab::features::{synth_toy_corpus, ToyOptions};
use vclab::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f: Formulation = std::env::args().nth(1).as_deref().unwrap_or("w-stargan").parse()?;
    let toy = synth_toy_corpus(3, 8, 6, 48, 0, ToyOptions::default())?;
    let mut cfg = TrainConfig::defaults(f, Preset::Tiny);
    cfg.iterations = 40;
    if f == Formulation::CycleGan {
        cfg.domain_pair = Some((0, 1));
    }

    let mut full = Trainer::<f64>::new(cfg.clone(), &toy.corpus)?;
    full.run(|_| Ok(()))?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("half.vcck");
    let mut half = Trainer::<f64>::new(cfg, &toy.corpus)?;
    while half.step < 20 {
        half.train_step()?;
    }
    Checkpoint::capture(&half).save(&path)?;
    println!("checkpoint at step 20: {} bytes", std::fs::metadata(&path)?.len());

    let mut resumed: Trainer<f64> = Checkpoint::load(&path)?.resume(&toy.corpus)?;
    resumed.run(|_| Ok(()))?;
    for term in full.history.terms() {
        let a = full.history.series(term).unwrap();
        let b = resumed.history.series(term).unwrap();
        let same = a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        println!("{term:>8}: final {:+.6}  identical {same}", a[a.len() - 1]);
    }
    Ok(())
}
