//! Frozen values from independent hand computations on tiny games.

use behest::data::{Observation, PlayDataset};
use behest::games::{induce_payoff_game, AllocationGame, Matrix, MixedStrategy};
use behest::likelihood::{loglik_equilibrium, Panel, PqchForm};
use behest::models::{model_predict, truncated_poisson, Level0Spec, ModelSpec, Strategic};
use num_rational::Ratio;

const V: f64 = 2.0;

fn symmetric_allocation(id: &str, x: [[f64; 2]; 2], p: [[f64; 2]; 2]) -> AllocationGame {
    let x1 = Matrix::from_rows(x.iter().map(|r| r.to_vec()).collect()).unwrap();
    let p1 = Matrix::from_rows(p.iter().map(|r| r.to_vec()).collect()).unwrap();
    AllocationGame::new(id, x1.clone(), x1.transpose(), p1.clone(), p1.transpose(), V).unwrap()
}

/// Row utilities at v = 2: [[3, 0], [5, 2]].
fn h1() -> AllocationGame {
    symmetric_allocation("h1", [[1.0, 0.0], [2.0, 1.0]], [[1.0, 0.0], [1.0, 0.0]])
}

/// Row utilities at v = 2: [[5, 0], [1, 3]].
fn h2() -> AllocationGame {
    symmetric_allocation("h2", [[2.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]])
}

fn dataset(rows: &[(&str, &str, usize)]) -> PlayDataset {
    PlayDataset::new(rows.iter().map(|(p, g, a)| Observation::new(*p, *g, *a)).collect()).unwrap()
}

#[test]
fn induced_utilities_match_hand_values() {
    let g = induce_payoff_game(&h1(), V);
    assert_eq!(g.u1().values(), &[3.0, 0.0, 5.0, 2.0]);
    assert_eq!(g.u2().values(), &[3.0, 5.0, 0.0, 2.0]);
}

#[test]
fn equilibrium_mixture_prediction() {
    let g = induce_payoff_game(&h1(), V);
    let m = ModelSpec::qre_l0(1.0, 0.25, Level0Spec::uniform());
    let s = model_predict(&m, &g, 0, Some(&MixedStrategy::uniform(2))).unwrap();
    let expected = [0.21440219151658815, 0.7855978084834118];
    for (p, e) in s.probs().iter().zip(expected) {
        assert!((p - e).abs() < 1e-14, "{p} vs {e}");
    }
}

#[test]
fn leave_one_out_equilibrium_loglik() {
    let d = dataset(&[("a", "h1", 0), ("b", "h1", 1), ("c", "h1", 1)]);
    let l0 = Level0Spec::uniform();
    let ll = loglik_equilibrium(&d, &[h1()], V, 0.7, 0.25, Some(&l0), Strategic::QRE).unwrap();
    assert!((ll - -1.9356120035120334).abs() < 1e-12, "{ll}");
}

#[test]
fn nash_pins_precision() {
    let d = dataset(&[("a", "h1", 0), ("b", "h1", 1), ("c", "h1", 1)]);
    let games = [h1()];
    let nash = loglik_equilibrium(&d, &games, V, 0.7, 0.0, None, Strategic::Nash).unwrap();
    let sharp = loglik_equilibrium(&d, &games, V, 100.0, 0.0, None, Strategic::QRE).unwrap();
    assert_eq!(nash, sharp);
}

#[test]
fn pqch_forms_on_two_by_two_panel() {
    let d = dataset(&[("A", "h1", 0), ("A", "h2", 1), ("B", "h1", 1), ("B", "h2", 0)]);
    let panel = Panel::new(&d, &[h1(), h2()]).unwrap();
    let m = ModelSpec::pqch(0.5, 1.0, Level0Spec::uniform());
    let per = panel.loglik(&m, V, PqchForm::PerObservation).unwrap();
    let stable = panel.loglik(&m, V, PqchForm::StableLevel).unwrap();
    assert!((per - -2.868235327191279).abs() < 1e-12, "{per}");
    assert!((stable - -2.8324913631835944).abs() < 1e-12, "{stable}");
}

#[test]
fn poisson_weights_are_rational() {
    for (tau, max_level) in [(2i64, 3usize), (3, 4), (1, 2)] {
        let mut weights = vec![Ratio::from_integer(1i64)];
        for level in 1..=max_level as i64 {
            let prev = *weights.last().unwrap();
            weights.push(prev * Ratio::new(tau, level));
        }
        let total: Ratio<i64> = weights.iter().sum();
        let probs = truncated_poisson(tau as f64, max_level).unwrap();
        for (p, w) in probs.probs().iter().zip(&weights) {
            let exact = w / total;
            assert!((p - *exact.numer() as f64 / *exact.denom() as f64).abs() < 1e-15);
        }
    }
    let three_nineteenths = truncated_poisson(2.0, 3).unwrap().probs()[0];
    assert!((three_nineteenths - 3.0 / 19.0).abs() < 1e-15);
}
