//! Logit quantal response equilibrium, optionally with a non-strategic share.
//!
//! Strategic players respond to `beta * level0 + (1 - beta) * s_opp`. The
//! solver runs damped fixed-point iteration from the uniform profile. When
//! the damped map does not contract (high precision, cyclic best responses)
//! it falls back to Newton's method on the log-odds form of the fixed-point
//! equations, seeded from the best damped iterate and a few fixed corners.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::level0::{level0_probs, Level0Spec};
use super::qbr_probs;
use crate::error::{Error, Result};
use crate::games::{MixedStrategy, PayoffGame};
use crate::numeric::softmax_scaled;

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

const NEWTON_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    /// Strategic strategies, row player first.
    pub strategies: [MixedStrategy; 2],
    /// Max-norm residual of the fixed-point equation at the returned profile.
    pub residual: f64,
    pub iterations: usize,
}

impl StrategyProfile {
    /// Population play of `player`: level-0 share plus strategic share.
    pub fn population(&self, g: &PayoffGame, player: usize, beta: f64, l0: Option<&Level0Spec>) -> MixedStrategy {
        let strategic = &self.strategies[player];
        match l0 {
            Some(spec) if beta > 0.0 => {
                let base = MixedStrategy::from_normalized(level0_probs(spec, g, player));
                base.mix(strategic, beta)
            }
            _ => strategic.clone(),
        }
    }
}

struct Problem<'a> {
    g: &'a PayoffGame,
    lambda: f64,
    beta: f64,
    level0: [Vec<f64>; 2],
}

impl Problem<'_> {
    fn belief(&self, opp_player: usize, opp: &[f64]) -> Vec<f64> {
        if self.beta == 0.0 {
            return opp.to_vec();
        }
        opp.iter()
            .zip(&self.level0[opp_player])
            .map(|(s, p0)| self.beta * p0 + (1.0 - self.beta) * s)
            .collect()
    }

    fn respond(&self, s: &[Vec<f64>; 2]) -> [Vec<f64>; 2] {
        [0, 1].map(|player| {
            let belief = self.belief(1 - player, &s[1 - player]);
            qbr_probs(self.g, player, &belief, self.lambda)
        })
    }

    fn residual(&self, s: &[Vec<f64>; 2]) -> f64 {
        let t = self.respond(s);
        max_diff(s, &t)
    }

    /// Log-odds equations against the last action, with analytic Jacobian.
    fn log_odds_system(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.g.n_actions();
        let m = n - 1;
        let s = self.probs_of(z);
        let mut f = DVector::zeros(2 * m);
        let mut jac = DMatrix::identity(2 * m, 2 * m);
        for player in 0..2 {
            let opp = 1 - player;
            let belief = self.belief(opp, &s[opp]);
            for a in 0..m {
                let row = player * m + a;
                let mut diff_eu = 0.0;
                for (b, q) in belief.iter().enumerate() {
                    diff_eu += q * (self.g.utility(player, a, b) - self.g.utility(player, m, b));
                }
                f[row] = z[row] - self.lambda * diff_eu;
                // d belief(b) / d z_opp(c) = (1 - beta) s(b) (δ_bc - s(c))
                for c in 0..m {
                    let mut d = 0.0;
                    for b in 0..n {
                        let ds = s[opp][b] * (if b == c { 1.0 } else { 0.0 } - s[opp][c]);
                        d += (self.g.utility(player, a, b) - self.g.utility(player, m, b)) * ds;
                    }
                    jac[(row, opp * m + c)] -= self.lambda * (1.0 - self.beta) * d;
                }
            }
        }
        (f, jac)
    }

    fn probs_of(&self, z: &DVector<f64>) -> [Vec<f64>; 2] {
        let m = self.g.n_actions() - 1;
        [0, 1].map(|player| {
            let mut logits: Vec<f64> = (0..m).map(|a| z[player * m + a]).collect();
            logits.push(0.0);
            softmax_scaled(&logits, 1.0)
        })
    }

    fn to_log_odds(&self, s: &[Vec<f64>; 2]) -> DVector<f64> {
        let n = self.g.n_actions();
        let m = n - 1;
        DVector::from_fn(2 * m, |i, _| {
            let player = i / m;
            let a = i % m;
            let p = s[player][a].max(1e-300);
            let last = s[player][m].max(1e-300);
            (p / last).ln()
        })
    }

    fn newton(&self, start: &[Vec<f64>; 2], tol: f64) -> Option<([Vec<f64>; 2], usize)> {
        let mut z = self.to_log_odds(start);
        let (mut f, mut jac) = self.log_odds_system(&z);
        let mut norm = f.norm();
        for iter in 0..NEWTON_MAX_ITER {
            let s = self.probs_of(&z);
            if self.residual(&s) <= tol {
                return Some((s, iter));
            }
            let step = jac.clone().lu().solve(&(-&f))?;
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-10 {
                let trial = &z + &step * t;
                let (ft, jt) = self.log_odds_system(&trial);
                let nt = ft.norm();
                if nt.is_finite() && nt < (1.0 - 1e-4 * t) * norm {
                    z = trial;
                    f = ft;
                    jac = jt;
                    norm = nt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        let s = self.probs_of(&z);
        (self.residual(&s) <= tol).then_some((s, NEWTON_MAX_ITER))
    }
}

fn max_diff(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Max-norm residual `‖s - QBR(beta * π0 + (1 - beta) * s)‖` of a profile.
pub fn qre_residual(
    g: &PayoffGame,
    strategies: &[MixedStrategy; 2],
    lambda: f64,
    beta: f64,
    l0: Option<&Level0Spec>,
) -> f64 {
    let level0 = [0, 1].map(|p| match l0 {
        Some(spec) => level0_probs(spec, g, p),
        None => vec![1.0 / g.n_actions() as f64; g.n_actions()],
    });
    let problem = Problem {
        g,
        lambda,
        beta,
        level0,
    };
    let s = [strategies[0].probs().to_vec(), strategies[1].probs().to_vec()];
    problem.residual(&s)
}

/// Solves for a (QRE+L0) fixed point of `g`.
pub fn qre_fixed_point(
    g: &PayoffGame,
    lambda: f64,
    beta: f64,
    l0: Option<&Level0Spec>,
    tol: f64,
    max_iter: usize,
) -> Result<StrategyProfile> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfBounds(format!("lambda = {lambda}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::OutOfBounds(format!("beta = {beta}")));
    }
    if beta > 0.0 && l0.is_none() {
        return Err(Error::InvalidSpec(
            "a positive non-strategic share needs a level-0 model".into(),
        ));
    }
    if let Some(spec) = l0 {
        spec.validate()?;
    }
    let n = g.n_actions();
    let level0 = [0, 1].map(|p| match l0 {
        Some(spec) => level0_probs(spec, g, p),
        None => vec![1.0 / n as f64; n],
    });
    let problem = Problem {
        g,
        lambda,
        beta,
        level0,
    };
    let finish = |s: [Vec<f64>; 2], iterations: usize| {
        let residual = problem.residual(&s);
        let [a, b] = s;
        StrategyProfile {
            strategies: [MixedStrategy::from_normalized(a), MixedStrategy::from_normalized(b)],
            residual,
            iterations,
        }
    };

    let mut s = [vec![1.0 / n as f64; n], vec![1.0 / n as f64; n]];
    let mut best = (f64::INFINITY, s.clone());
    let mut eta = DEFAULT_DAMPING;
    let mut stalled = 0usize;
    for iter in 0..max_iter {
        let t = problem.respond(&s);
        let residual = max_diff(&s, &t);
        if residual <= tol {
            return Ok(finish(s, iter));
        }
        if residual < best.0 {
            best = (residual, s.clone());
            stalled = 0;
        } else {
            stalled += 1;
            // Oscillation: damp harder before giving the iteration up.
            if stalled >= 50 {
                eta = (eta * 0.5).max(1e-3);
                stalled = 0;
            }
        }
        for player in 0..2 {
            for (x, y) in s[player].iter_mut().zip(&t[player]) {
                *x = (1.0 - eta) * *x + eta * y;
            }
        }
        // A long stall at the damping floor is a cycle; hand over to Newton.
        if eta <= 1e-3 && stalled >= 49 {
            break;
        }
    }

    let mut starts = vec![best.1.clone()];
    let corner = |a: usize| {
        let mut v = vec![0.1 / (n - 1) as f64; n];
        v[a] = 0.9;
        v
    };
    for a in 0..n {
        for b in 0..n {
            starts.push([corner(a), corner(b)]);
        }
    }
    for start in &starts {
        if let Some((sol, iters)) = problem.newton(start, tol) {
            return Ok(finish(sol, max_iter + iters));
        }
    }
    Err(Error::NoConvergence {
        residual: best.0,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{make_payoff_game, random_payoff_game, Matrix};
    use crate::models::level0::Level0Weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_precision_is_uniform_immediately() {
        let g = random_payoff_game("g", &mut ChaCha8Rng::seed_from_u64(2), 3, 0.0, 100.0).unwrap();
        let p = qre_fixed_point(&g, 0.0, 0.0, None, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(p.iterations <= 1);
        for s in &p.strategies {
            assert!(s.probs().iter().all(|&x| x == 1.0 / 3.0));
        }
    }

    #[test]
    fn indifferent_game_has_uniform_fixed_point() {
        let u = Matrix::from_fn(3, |_, _| 5.0);
        let g = make_payoff_game("c", u.clone(), u, true).unwrap();
        let p = qre_fixed_point(&g, 3.0, 0.0, None, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(p.strategies[0].probs().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn residual_small_on_random_game() {
        let g = random_payoff_game("g", &mut ChaCha8Rng::seed_from_u64(8), 3, 0.0, 100.0).unwrap();
        let p = qre_fixed_point(&g, 0.5, 0.0, None, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(qre_residual(&g, &p.strategies, 0.5, 0.0, None) <= 1e-8);
    }

    #[test]
    fn matching_pennies_needs_no_damping_luck() {
        // Unique fully mixed equilibrium; plain best-response iteration cycles.
        let u1 = Matrix::from_rows(vec![vec![100.0, 0.0], vec![0.0, 100.0]]).unwrap();
        let u2 = Matrix::from_rows(vec![vec![0.0, 100.0], vec![100.0, 0.0]]).unwrap();
        let g = make_payoff_game("mp", u1, u2, false).unwrap();
        let p = qre_fixed_point(&g, 10.0, 0.0, None, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(qre_residual(&g, &p.strategies, 10.0, 0.0, None) <= 1e-8);
        assert!((p.strategies[0].prob(0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn positive_beta_requires_level0() {
        let g = random_payoff_game("g", &mut ChaCha8Rng::seed_from_u64(8), 3, 0.0, 100.0).unwrap();
        assert!(matches!(
            qre_fixed_point(&g, 0.5, 0.3, None, DEFAULT_TOL, DEFAULT_MAX_ITER),
            Err(Error::InvalidSpec(_))
        ));
        let l0 = Level0Spec::ql4(0.2, Level0Weights::default());
        let p = qre_fixed_point(&g, 1.0, 0.5, Some(&l0), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(qre_residual(&g, &p.strategies, 1.0, 0.5, Some(&l0)) <= 1e-8);
    }
}
