//! Trains briefly (or loads a checkpoint), converts one utterance to every
//! other domain and checks the post-processing: output statistics equal the
//! target domain's and the length is preserved.
//!
//!     cargo run --release --example convert -- [checkpoint.vcck]

use vclab::checkpoint::Checkpoint;
use vclab::config::{Formulation, Preset, TrainConfig};
use vclab::features::{compute_stats, synth_toy_corpus, ToyOptions};
use vclab::model::Model;
use vclab::trainer::Trainer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let toy = synth_toy_corpus(4, 8, 20, 64, 1, ToyOptions::default())?;
    let corpus = &toy.corpus;
    let model: Model<f64> = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(path.as_ref())?.model()?,
        None => {
            let mut cfg = TrainConfig::defaults(Formulation::AStarGan1, Preset::Tiny);
            cfg.iterations = 300;
            let mut t = Trainer::<f64>::new(cfg, corpus)?;
            t.run(|_| Ok(()))?;
            t.model
        }
    };

    let x = &corpus.utterances[0][3];
    println!("input: {} frames from {}", x.len(), corpus.names[0]);
    for k in 1..corpus.num_domains() {
        let out = model.convert(x, None, k)?;
        let got = compute_stats(std::slice::from_ref(&out.sequence))?;
        let want = &corpus.stats[k];
        let err = got
            .psi
            .iter()
            .zip(&want.psi)
            .chain(got.zeta.iter().zip(&want.zeta))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "-> {}: {} frames, source detected as {}, max stats error {err:.1e}",
            corpus.names[k],
            out.sequence.len(),
            corpus.names[out.source]
        );
    }
    Ok(())
}
