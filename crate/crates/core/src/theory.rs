//! Finite-support version of the augmented-classifier game.
//!
//! Distributions are `K x S` row-stochastic matrices: row `k` is a
//! distribution over the `S` support points given domain `k`.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, VclabError};
use crate::util::write_atomic;

const ROW_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TabularFormulation {
    /// `2K` classes: K real, K fake.
    AStarGan1,
    /// `K + 1` classes: K real, one shared fake.
    AStarGan2,
    /// One real/fake discriminator per domain, no classification term.
    CStarGanAdvOnly,
}

impl FromStr for TabularFormulation {
    type Err = VclabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a-stargan1" => Ok(Self::AStarGan1),
            "a-stargan2" => Ok(Self::AStarGan2),
            "c-stargan-adv-only" | "c-stargan" => Ok(Self::CStarGanAdvOnly),
            _ => Err(VclabError::Invalid(format!("unknown tabular formulation `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularGame {
    pub p_d: Array2<f64>,
    pub p_g: Array2<f64>,
    pub prior: Array1<f64>,
}

fn check_stochastic(name: &str, m: &Array2<f64>) -> Result<()> {
    for (k, row) in m.rows().into_iter().enumerate() {
        if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > ROW_TOL {
            return Err(VclabError::Invalid(format!("{name} row {k} is not a distribution")));
        }
    }
    Ok(())
}

impl TabularGame {
    /// Game with a uniform prior.
    pub fn new(p_d: Array2<f64>, p_g: Array2<f64>) -> Result<Self> {
        let k = p_d.nrows();
        Self::with_prior(p_d, p_g, Array1::from_elem(k, 1.0 / k as f64))
    }

    pub fn with_prior(p_d: Array2<f64>, p_g: Array2<f64>, prior: Array1<f64>) -> Result<Self> {
        if p_d.dim() != p_g.dim() || prior.len() != p_d.nrows() || p_d.is_empty() {
            return Err(VclabError::Shape(format!(
                "p_d {:?}, p_G {:?}, prior {}",
                p_d.dim(),
                p_g.dim(),
                prior.len()
            )));
        }
        check_stochastic("p_d", &p_d)?;
        check_stochastic("p_G", &p_g)?;
        if prior.iter().any(|&p| !(p >= 0.0)) || (prior.sum() - 1.0).abs() > ROW_TOL {
            return Err(VclabError::Invalid("prior is not a distribution".into()));
        }
        Ok(TabularGame { p_d, p_g, prior })
    }

    pub fn domains(&self) -> usize {
        self.p_d.nrows()
    }

    pub fn support(&self) -> usize {
        self.p_d.ncols()
    }

    fn mixture(&self, m: &Array2<f64>) -> Array1<f64> {
        self.prior.dot(m)
    }
}

/// `p_A(class | y)` with one column per support point. For
/// [`TabularFormulation::CStarGanAdvOnly`] row `k` is instead the
/// probability that `y` is real according to the discriminator of domain `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularClassifier {
    pub formulation: TabularFormulation,
    pub probs: Array2<f64>,
}

impl TabularClassifier {
    /// Uniform over classes (or 1/2 everywhere for per-domain discriminators).
    pub fn uniform(formulation: TabularFormulation, game: &TabularGame) -> Self {
        let (k, s) = (game.domains(), game.support());
        let probs = match formulation {
            TabularFormulation::AStarGan1 => Array2::from_elem((2 * k, s), 0.5 / k as f64),
            TabularFormulation::AStarGan2 => Array2::from_elem((k + 1, s), 1.0 / (k + 1) as f64),
            TabularFormulation::CStarGanAdvOnly => Array2::from_elem((k, s), 0.5),
        };
        TabularClassifier { formulation, probs }
    }

    /// Mass on the real classes at each support point.
    pub fn real_mass(&self, domains: usize) -> Array1<f64> {
        match self.formulation {
            TabularFormulation::CStarGanAdvOnly => self.probs.mean_axis(Axis(0)).unwrap(),
            _ => self.probs.slice(ndarray::s![..domains, ..]).sum_axis(Axis(0)),
        }
    }
}

/// Closed-form best response of the classifier to a fixed generator.
/// Support points carrying no mass get uniform columns.
pub fn optimal_classifier(game: &TabularGame, formulation: TabularFormulation) -> TabularClassifier {
    let (k, s) = (game.domains(), game.support());
    let mut a = TabularClassifier::uniform(formulation, game);
    match formulation {
        TabularFormulation::AStarGan1 | TabularFormulation::AStarGan2 => {
            let md = game.mixture(&game.p_d);
            let mg = game.mixture(&game.p_g);
            for y in 0..s {
                let gamma = md[y] + mg[y];
                if gamma <= 0.0 {
                    continue;
                }
                for c in 0..k {
                    a.probs[[c, y]] = game.prior[c] * game.p_d[[c, y]] / gamma;
                    if formulation == TabularFormulation::AStarGan1 {
                        a.probs[[k + c, y]] = game.prior[c] * game.p_g[[c, y]] / gamma;
                    }
                }
                if formulation == TabularFormulation::AStarGan2 {
                    a.probs[[k, y]] = mg[y] / gamma;
                }
            }
        }
        TabularFormulation::CStarGanAdvOnly => {
            for c in 0..k {
                for y in 0..s {
                    let den = game.p_d[[c, y]] + game.p_g[[c, y]];
                    if den > 0.0 {
                        a.probs[[c, y]] = game.p_d[[c, y]] / den;
                    }
                }
            }
        }
    }
    a
}

/// `w * ln p` with the convention `0 * ln 0 = 0`.
fn xlogy(w: f64, p: f64) -> f64 {
    if w == 0.0 { 0.0 } else { w * p.ln() }
}

fn fake_prob(a: &TabularClassifier, k: usize, c: usize, y: usize) -> f64 {
    match a.formulation {
        TabularFormulation::AStarGan1 => a.probs[[k + c, y]],
        TabularFormulation::AStarGan2 => a.probs[[k, y]],
        TabularFormulation::CStarGanAdvOnly => 1.0 - a.probs[[c, y]],
    }
}

/// Classifier (or discriminator) adversarial loss.
pub fn classifier_loss(game: &TabularGame, a: &TabularClassifier) -> f64 {
    let (k, s) = (game.domains(), game.support());
    let mut loss = 0.0;
    for c in 0..k {
        for y in 0..s {
            loss -= game.prior[c] * xlogy(game.p_d[[c, y]], a.probs[[c, y]]);
            loss -= game.prior[c] * xlogy(game.p_g[[c, y]], fake_prob(a, k, c, y));
        }
    }
    loss
}

/// Per-point generator loss `h(c, y)`, the integrand against `p(c) p_G(y|c)`.
fn generator_integrand(a: &TabularClassifier, k: usize) -> Array2<f64> {
    let s = a.probs.ncols();
    Array2::from_shape_fn((k, s), |(c, y)| match a.formulation {
        TabularFormulation::CStarGanAdvOnly => -a.probs[[c, y]].ln(),
        _ => fake_prob(a, k, c, y).ln() - a.probs[[c, y]].ln(),
    })
}

/// Generator adversarial loss against a fixed classifier. The per-domain
/// discriminator game uses the non-saturating form.
pub fn generator_loss(game: &TabularGame, a: &TabularClassifier) -> f64 {
    let h = generator_integrand(a, game.domains());
    let mut loss = 0.0;
    for ((c, y), &w) in game.p_g.indexed_iter() {
        if w > 0.0 {
            loss += game.prior[c] * w * h[[c, y]];
        }
    }
    loss
}

/// `KL(p_G(.|k) || p_d(.|k))` for every domain; infinite where `p_G` has
/// mass outside the support of `p_d`.
pub fn domain_kl(game: &TabularGame) -> Vec<f64> {
    game.p_g
        .rows()
        .into_iter()
        .zip(game.p_d.rows())
        .map(|(g, d)| {
            g.iter()
                .zip(d.iter())
                .map(|(&pg, &pd)| match (pg > 0.0, pd > 0.0) {
                    (false, _) => 0.0,
                    (true, false) => f64::INFINITY,
                    (true, true) => pg * (pg / pd).ln(),
                })
                .sum()
        })
        .collect()
}

pub fn expected_kl(game: &TabularGame) -> f64 {
    domain_kl(game).iter().zip(&game.prior).map(|(kl, p)| if *p > 0.0 { p * kl } else { 0.0 }).sum()
}

/// Generator loss of the 2K-class game once the classifier is at its best
/// response, written as the expected KL divergence.
pub fn generator_loss_at_optimum(game: &TabularGame) -> f64 {
    expected_kl(game)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BestResponseCheck {
    pub is_best: bool,
    /// Candidate loss minus the closed-form optimum loss.
    pub gap: f64,
}

pub fn classifier_best_response_check(game: &TabularGame, candidate: &TabularClassifier) -> BestResponseCheck {
    let opt = optimal_classifier(game, candidate.formulation);
    let gap = classifier_loss(game, candidate) - classifier_loss(game, &opt);
    BestResponseCheck { is_best: gap <= 1e-9, gap }
}

/// Multiplies every entry by `exp(scale * z)` and renormalizes the columns.
pub fn perturb_classifier<R: Rng + ?Sized>(a: &TabularClassifier, scale: f64, rng: &mut R) -> TabularClassifier {
    let mut probs = a.probs.mapv(|p| p * (scale * rng.sample::<f64, _>(StandardNormal)).exp());
    if a.formulation == TabularFormulation::CStarGanAdvOnly {
        probs.mapv_inplace(|p| p.min(1.0 - 1e-12));
    } else {
        for mut col in probs.columns_mut() {
            let total = col.sum();
            col /= total;
        }
    }
    TabularClassifier { formulation: a.formulation, probs }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row /= total;
    }
    p
}

/// Game with well-conditioned real distributions (entries bounded away from
/// zero) and a random full-support generator.
pub fn random_game(domains: usize, support: usize, seed: u64) -> Result<TabularGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p_d = Array2::from_shape_fn((domains, support), |_| 0.5 + rng.random::<f64>());
    for mut row in p_d.rows_mut() {
        let total = row.sum();
        row /= total;
    }
    let logits = Array2::from_shape_fn((domains, support), |_| rng.sample::<f64, _>(StandardNormal));
    TabularGame::new(p_d, softmax_rows(&logits))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub expected_kl: f64,
    pub domain_kl: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GameSolution {
    /// One point per step, starting with the initial state.
    pub trajectory: Vec<TrajectoryPoint>,
    pub game: TabularGame,
    /// Best response to the final generator.
    pub classifier: TabularClassifier,
    /// Set when the divergence rose on more than half of the steps.
    pub diverged: bool,
}

impl GameSolution {
    pub fn final_kl(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |p| p.expected_kl)
    }

    /// Mean real-class mass the final classifier assigns to generated samples.
    pub fn fake_real_probability(&self) -> f64 {
        let mass = self.classifier.real_mass(self.game.domains());
        let mut total = 0.0;
        for ((c, y), &w) in self.game.p_g.indexed_iter() {
            total += self.game.prior[c] * w * mass[y];
        }
        total
    }

    /// `step,expected_kl,kl_1,...,kl_K`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["step".to_string(), "expected_kl".to_string()];
        header.extend((1..=self.game.domains()).map(|k| format!("kl_{k}")));
        w.write_record(&header)?;
        for p in &self.trajectory {
            let mut rec = vec![p.step.to_string(), p.expected_kl.to_string()];
            rec.extend(p.domain_kl.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| VclabError::io(path, e))?;
        let bytes = w.into_inner().map_err(|e| VclabError::Invalid(e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Alternates the exact classifier best response with a gradient step on
/// per-row generator logits.
pub fn solve_tabular_game(
    game: &TabularGame,
    formulation: TabularFormulation,
    steps: usize,
    step_size: f64,
) -> Result<GameSolution> {
    if game.p_g.iter().any(|&p| p <= 0.0) {
        return Err(VclabError::Invalid("generator must start with full support".into()));
    }
    let k = game.domains();
    let mut logits = game.p_g.mapv(f64::ln);
    let mut state = game.clone();
    let point = |step: usize, g: &TabularGame| TrajectoryPoint { step, expected_kl: expected_kl(g), domain_kl: domain_kl(g) };
    let mut trajectory = vec![point(0, &state)];
    let mut rises = 0;
    for step in 1..=steps {
        let a = optimal_classifier(&state, formulation);
        let h = generator_integrand(&a, k);
        for c in 0..k {
            let pg = state.p_g.row(c);
            let mean: f64 = pg.iter().zip(h.row(c)).map(|(p, v)| p * v).sum();
            for y in 0..state.support() {
                logits[[c, y]] -= step_size * state.prior[c] * pg[y] * (h[[c, y]] - mean);
            }
        }
        state.p_g = softmax_rows(&logits);
        let p = point(step, &state);
        if p.expected_kl > trajectory[step - 1].expected_kl {
            rises += 1;
        }
        trajectory.push(p);
    }
    let diverged = steps > 0 && 2 * rises > steps;
    if diverged {
        log::warn!("{formulation:?}: divergence rose on {rises} of {steps} steps");
    }
    let classifier = optimal_classifier(&state, formulation);
    Ok(GameSolution { trajectory, game: state, classifier, diverged })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub final_kl: f64,
    pub equilibrium_kl: f64,
    pub min_perturbation_gap: f64,
    pub plug_in_error: f64,
    pub diverged: bool,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct TheoryOptions {
    pub domains: usize,
    pub support: usize,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub step_size: f64,
    pub perturbations: usize,
    pub kl_tolerance: f64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            domains: 3,
            support: 8,
            seeds: (0..20).collect(),
            steps: 5000,
            step_size: 1.0,
            perturbations: 1000,
            kl_tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TheoryReport {
    pub seeds: Vec<SeedReport>,
    /// Solution for the first seed, kept for its trajectory.
    pub first: Option<GameSolution>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        !self.seeds.is_empty() && self.seeds.iter().all(|s| s.passed)
    }

    pub fn write_summary(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "seed\tfinal_kl\tequilibrium_kl\tmin_gap\tplug_in_err\tpassed")?;
        for s in &self.seeds {
            writeln!(
                out,
                "{}\t{:.3e}\t{:.3e}\t{:.3e}\t{:.3e}\t{}",
                s.seed, s.final_kl, s.equilibrium_kl, s.min_perturbation_gap, s.plug_in_error, s.passed
            )?;
        }
        writeln!(out, "{}", if self.passed() { "all tolerances met" } else { "TOLERANCE BREACH" })
    }
}

fn verify_seed(opts: &TheoryOptions, seed: u64) -> Result<(SeedReport, GameSolution)> {
    let f = TabularFormulation::AStarGan1;
    let game = random_game(opts.domains, opts.support, seed)?;
    let sol = solve_tabular_game(&game, f, opts.steps, opts.step_size)?;

    let fixed = TabularGame::with_prior(game.p_d.clone(), game.p_d.clone(), game.prior.clone())?;
    let eq = solve_tabular_game(&fixed, f, opts.steps, opts.step_size)?;
    let equilibrium_kl = eq.trajectory.iter().map(|p| p.expected_kl).fold(0.0, f64::max);

    let opt = optimal_classifier(&game, f);
    let plug_in_error = (generator_loss(&game, &opt) - generator_loss_at_optimum(&game)).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut min_gap = f64::INFINITY;
    for i in 0..opts.perturbations {
        let scale = 1e-3 * 10f64.powi((i % 4) as i32);
        let cand = perturb_classifier(&opt, scale, &mut rng);
        min_gap = min_gap.min(classifier_best_response_check(&game, &cand).gap);
    }

    let passed = sol.final_kl() < opts.kl_tolerance
        && equilibrium_kl < 1e-6
        && min_gap >= 0.0
        && plug_in_error <= 1e-10;
    let report = SeedReport {
        seed,
        final_kl: sol.final_kl(),
        equilibrium_kl,
        min_perturbation_gap: min_gap,
        plug_in_error,
        diverged: sol.diverged,
        passed,
    };
    Ok((report, sol))
}

/// Runs every seed on its own thread.
pub fn verify_theory(opts: &TheoryOptions) -> Result<TheoryReport> {
    let results: Vec<Result<(SeedReport, GameSolution)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = opts.seeds.iter().map(|&seed| scope.spawn(move || verify_seed(opts, seed))).collect();
        handles.into_iter().map(|h| h.join().expect("theory worker panicked")).collect()
    });
    let mut seeds = Vec::new();
    let mut first = None;
    for r in results {
        let (rep, sol) = r?;
        if first.is_none() {
            first = Some(sol);
        }
        seeds.push(rep);
    }
    Ok(TheoryReport { seeds, first })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn disjoint_single_domain() {
        let g = TabularGame::new(array![[1.0, 0.0]], array![[0.0, 1.0]]).unwrap();
        let a = optimal_classifier(&g, TabularFormulation::AStarGan1);
        assert_eq!(a.probs, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn two_domain_hand_example() {
        let g = TabularGame::new(array![[1.0, 0.0], [0.0, 1.0]], array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let a = optimal_classifier(&g, TabularFormulation::AStarGan1);
        assert_eq!(a.probs.column(0).to_vec(), vec![0.5, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn zero_mass_point_is_uniform() {
        let g = TabularGame::new(array![[1.0, 0.0]], array![[1.0, 0.0]]).unwrap();
        let a = optimal_classifier(&g, TabularFormulation::AStarGan1);
        assert_eq!(a.probs.column(1).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        assert!(TabularGame::new(array![[0.5, 0.6]], array![[0.5, 0.5]]).is_err());
        assert!(TabularGame::new(array![[1.5, -0.5]], array![[0.5, 0.5]]).is_err());
    }
}
