//! The augmented-classifier game on a finite support: the classifier plays
//! its closed-form best response and the generator follows the gradient.
//! The expected KL divergence between generated and real distributions
//! goes to zero.
//!
//!     cargo run --release --example tabular_game -- [seed]

use vclab::theory::{
    classifier_best_response_check, expected_kl, generator_loss, optimal_classifier, perturb_classifier, random_game,
    solve_tabular_game, TabularFormulation,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let game = random_game(3, 8, seed)?;

    let opt = optimal_classifier(&game, TabularFormulation::AStarGan1);
    println!("initial E_k KL {:.4}", expected_kl(&game));
    println!("generator loss at the best response {:.4}", generator_loss(&game, &opt));
    let mut rng = rand::rng();
    let worst = (0..200)
        .map(|_| classifier_best_response_check(&game, &perturb_classifier(&opt, 0.05, &mut rng)).gap)
        .fold(f64::INFINITY, f64::min);
    println!("smallest loss increase over 200 perturbed classifiers {worst:.2e}");

    for f in [TabularFormulation::AStarGan1, TabularFormulation::AStarGan2, TabularFormulation::CStarGanAdvOnly] {
        let sol = solve_tabular_game(&game, f, 5000, 1.0)?;
        let at = |s: usize| sol.trajectory[s.min(sol.trajectory.len() - 1)].expected_kl;
        println!(
            "{f:?}: KL {:.2e} -> {:.2e} (100) -> {:.2e} (1000) -> {:.2e}; fakes judged real {:.3}",
            at(0),
            at(100),
            at(1000),
            sol.final_kl(),
            sol.fake_real_probability()
        );
    }
    Ok(())
}
