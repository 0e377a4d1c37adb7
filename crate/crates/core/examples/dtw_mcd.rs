//! Mel-cepstral distortion after DTW alignment. A time-stretched copy of an
//! utterance scores near zero while the same content in another domain
//! does not.
//!
//!     cargo run --example dtw_mcd

use ndarray::Array2;
use vclab::eval::{dtw_mcd, summarize, McdRow};
use vclab::features::{synth_toy_corpus, FeatureSequence, ToyOptions};

fn stretch(x: &FeatureSequence) -> FeatureSequence {
    // repeat every third frame
    let cols: Vec<usize> = (0..x.len()).flat_map(|n| if n % 3 == 0 { vec![n, n] } else { vec![n] }).collect();
    let data = Array2::from_shape_fn((x.dim(), cols.len()), |(q, i)| x.data[[q, cols[i]]]);
    FeatureSequence { data, frame_shift_ms: x.frame_shift_ms, voiced: None, f0: None }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let toy = synth_toy_corpus(3, 8, 5, 60, 2, ToyOptions::default())?;
    let c = &toy.corpus;
    let mut rows = Vec::new();
    for (i, u) in c.utterances[0].iter().enumerate() {
        let same = dtw_mcd(&stretch(u), u)?;
        let other = dtw_mcd(u, &c.utterances[1][i])?;
        println!(
            "utt {i}: stretched copy {:.3} dB over {} steps, other domain {:.3} dB",
            same.mean_db,
            same.path.len(),
            other.mean_db
        );
        rows.push(McdRow { source: c.names[0].clone(), target: c.names[1].clone(), utterance: format!("{i}"), mcd_db: other.mean_db });
        let third = dtw_mcd(u, &c.utterances[2][i])?;
        rows.push(McdRow { source: c.names[0].clone(), target: c.names[2].clone(), utterance: format!("{i}"), mcd_db: third.mean_db });
    }
    println!("\nsource   target   mean ± 95% CI");
    for s in summarize(&rows) {
        println!("{}  {}  {:.2} ± {:.2} dB", s.source, s.target, s.mean_mcd_db, s.ci95_db);
    }
    Ok(())
}
