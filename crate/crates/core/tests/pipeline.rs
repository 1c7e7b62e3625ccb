//! Simulate-then-fit checks across modules.

use std::collections::HashSet;

use behest::estimation::{maximize_likelihood, FitOptions};
use behest::evaluation::{cross_validate, welfare_prediction, WelfareSplit};
use behest::games::{random_payoff_game, PayoffGame};
use behest::likelihood::{Panel, PqchForm};
use behest::models::{level0_predict, Level0Spec, Level0Weights, ModelSpec};
use behest::simulate::{allocation_games, recovery_experiment, simulate_dataset, LevelSampling, SimulationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn payoff_games(n: usize, seed: u64) -> Vec<PayoffGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| random_payoff_game(format!("g{:02}", i + 1), &mut rng, 3, 0.0, 100.0).unwrap())
        .collect()
}

fn ql4() -> Level0Spec {
    Level0Spec::ql4(0.2, Level0Weights::from_array([0.3, 0.1, 0.1, 0.3, 0.2]))
}

#[test]
fn simulated_frequencies_pass_chi_square() {
    let games = payoff_games(1, 4);
    let m = ModelSpec::nonstrategic_only(ql4());
    let n = 10_000;
    let d = simulate_dataset(&SimulationConfig::new(m, 10.0, n, games.clone(), 4)).unwrap();
    let mut counts = [0.0; 3];
    for o in d.observations() {
        counts[o.action] += 1.0;
    }
    let p = level0_predict(&ql4(), &games[0], 0).unwrap();
    let chi2: f64 = counts
        .iter()
        .zip(p.probs())
        .map(|(c, q)| (c - n as f64 * q).powi(2) / (n as f64 * q))
        .sum();
    // Upper 0.001 quantile of chi-square with 2 degrees of freedom.
    assert!(chi2 < 13.8155, "chi2 = {chi2}");
}

#[test]
fn all_nonstrategic_generator_recovers_share() {
    let games = payoff_games(24, 8);
    let truth = ModelSpec::qre_l0(0.25, 1.0, ql4());
    let cfg = SimulationConfig::new(truth, 20.0, 200, games, 8);
    let fit = ModelSpec::qre_l0(0.1, 0.5, ql4());
    let out = recovery_experiment(&cfg, &fit, 3).unwrap();
    assert!(out.estimate.theta_hat.beta() > 0.9, "{:?}", out.estimate.theta_hat);
}

#[test]
fn qre_fit_recovers_value() {
    let games = payoff_games(24, 9);
    let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 150, games, 9);
    let out = recovery_experiment(&cfg, &ModelSpec::qre(0.1), 3).unwrap();
    assert!(out.relative_error < 0.25, "{}", out.relative_error);
    assert_eq!(out.truth.v, 10.0);
}

#[test]
fn stable_level_fit_reports_form() {
    let games = payoff_games(12, 10);
    let truth = ModelSpec::pqch(0.1, 1.5, Level0Spec::uniform());
    let mut cfg = SimulationConfig::new(truth.clone(), 10.0, 80, games, 10);
    cfg.level_sampling = LevelSampling::Stable;
    let d = simulate_dataset(&cfg).unwrap();
    let alloc = allocation_games(&cfg).unwrap();
    let opts = FitOptions {
        pqch_form: PqchForm::StableLevel,
        ..FitOptions::with_restarts(2)
    };
    let r = behest::estimation::maximize_likelihood_with(&d, &alloc, &truth, &opts, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    assert_eq!(r.pqch_form, PqchForm::StableLevel);
    let at_truth = Panel::new(&d, &alloc)
        .unwrap()
        .loglik(&truth, 10.0, PqchForm::StableLevel)
        .unwrap();
    assert!(r.loglik >= at_truth - 1e-6);
}

#[test]
fn fit_is_seed_deterministic() {
    let games = payoff_games(6, 11);
    let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 40, games, 11);
    let d = simulate_dataset(&cfg).unwrap();
    let alloc = allocation_games(&cfg).unwrap();
    let fit = |seed| {
        maximize_likelihood(
            &d,
            &alloc,
            &ModelSpec::qre(0.1),
            3,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    };
    let (a, b) = (fit(3), fit(3));
    assert_eq!(a.v_hat, b.v_hat);
    assert_eq!(a.restarts, b.restarts);
}

#[test]
fn cross_validation_covers_every_participant_once_per_round() {
    let games = payoff_games(6, 12);
    let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 30, games, 12);
    let d = simulate_dataset(&cfg).unwrap();
    let alloc = allocation_games(&cfg).unwrap();
    let cv = cross_validate(
        &d,
        &alloc,
        &ModelSpec::qre(0.1),
        3,
        2,
        &FitOptions::with_restarts(1),
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    assert_eq!(cv.folds.len(), 6);
    let rounds: HashSet<usize> = cv.folds.iter().map(|f| f.round).collect();
    assert_eq!(rounds.len(), 2);
    assert!(cv.folds.iter().all(|f| f.v_hat > 0.0 && f.test_loglik <= 0.0));
}

#[test]
fn welfare_split_uses_half_the_games() {
    let games = payoff_games(8, 13);
    let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 60, games, 13);
    let d = simulate_dataset(&cfg).unwrap();
    let alloc = allocation_games(&cfg).unwrap();
    let out = welfare_prediction(
        &d,
        &alloc,
        &ModelSpec::qre(0.1),
        &WelfareSplit::Random,
        &FitOptions::with_restarts(1),
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    assert_eq!(out.train_games.len(), 4);
    assert_eq!(out.games.len(), 4);
    let train: HashSet<&str> = out.train_games.iter().map(String::as_str).collect();
    assert!(out.games.iter().all(|g| !train.contains(g.game.as_str())));
    let mean = out.games.iter().map(|g| g.relative_error).sum::<f64>() / 4.0;
    assert!((mean - out.relative_error).abs() < 1e-12);
}
