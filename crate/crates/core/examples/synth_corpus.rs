//! Writes the Gaussian-domain toy corpus to disk and prints per-domain
//! statistics.
//!
//!     cargo run --example synth_corpus -- /tmp/toy [domains] [dim]

use std::path::PathBuf;

use vclab::features::{load_corpus, save_corpus, synth_toy_corpus, ToyOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy_corpus".into()));
    let domains: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let dim: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);

    let toy = synth_toy_corpus(domains, dim, 20, 64, 0, ToyOptions::default())?;
    let manifest = save_corpus(&toy.corpus, &out)?;
    let corpus = load_corpus(&manifest)?;
    println!("{} domains, Q = {}, manifest {}", corpus.num_domains(), corpus.dim(), manifest.display());
    for (k, name) in corpus.names.iter().enumerate() {
        let s = &corpus.stats[k];
        let fmt = |v: &[f64]| v.iter().take(4).map(|x| format!("{x:+.2}")).collect::<Vec<_>>().join(" ");
        println!(
            "{name}: {} utterances, psi[..4] {}  zeta[..4] {}  log-F0 {:.3} +- {:.3}",
            corpus.utterances[k].len(),
            fmt(&s.psi),
            fmt(&s.zeta),
            s.mu_logf0.unwrap_or(f64::NAN),
            s.sigma_logf0.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
