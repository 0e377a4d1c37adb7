//! Modulation spectra of the toy corpus and of a smoothed copy. Smoothing
//! removes the fast modulations that over-smoothed conversions also lose.
//!
//!     cargo run --example modulation_spectrum -- [q]

use ndarray::Array2;
use vclab::eval::modulation_spectrum;
use vclab::features::{synth_toy_corpus, FeatureSequence, ToyOptions};

fn smooth(x: &FeatureSequence) -> FeatureSequence {
    let n = x.len();
    let data = Array2::from_shape_fn((x.dim(), n), |(q, t)| {
        let lo = t.saturating_sub(3);
        let hi = (t + 4).min(n);
        (lo..hi).map(|i| x.data[[q, i]]).sum::<f64>() / (hi - lo) as f64
    });
    FeatureSequence { data, ..x.clone() }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let toy = synth_toy_corpus(2, 8, 10, 512, 3, ToyOptions::default())?;
    let utts = &toy.corpus.utterances[0];
    let smoothed: Vec<_> = utts.iter().map(smooth).collect();
    let a = modulation_spectrum(utts, q - 1)?;
    let b = modulation_spectrum(&smoothed, q - 1)?;
    println!("coefficient {q}, {} utterances", a.utterances);
    println!("{:>9}  {:>8}  {:>8}", "Hz", "raw dB", "smooth dB");
    for i in (0..a.freqs_hz.len()).step_by(8) {
        println!("{:>9.2}  {:>8.2}  {:>8.2}", a.freqs_hz[i], a.db[i], b.db[i]);
    }
    Ok(())
}
