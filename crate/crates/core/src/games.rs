//! Two-player normal-form games in two representations: payoff games (raw
//! utilities per outcome) and allocation games (units of a good plus a
//! payment per outcome, valued at a common per-unit valuation).

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square matrix stored row-major; serialized as nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("matrix has no rows".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Matrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                data.push(f(r, c));
            }
        }
        Matrix { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.n, |r, c| self.get(c, r))
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.n, i % self.n))
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.rows()
    }
}

/// Probability vector over one player's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidStrategy("no actions".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidStrategy(format!(
                "negative or non-finite entry in {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidStrategy(format!("probabilities sum to {total}")));
        }
        Ok(MixedStrategy { probs })
    }

    /// Wraps a vector already known to be a distribution (internal model output).
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        MixedStrategy { probs }
    }

    pub fn uniform(n: usize) -> Self {
        MixedStrategy {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[action] = 1.0;
        MixedStrategy { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.probs[action]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &MixedStrategy, weight: f64) -> MixedStrategy {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        MixedStrategy { probs }
    }

    pub fn max_abs_diff(&self, other: &MixedStrategy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Two-player normal-form game with utilities in currency units.
///
/// `u1[r][c]` is the row player's utility and `u2[r][c]` the column
/// player's, where `r` is the row player's action and `c` the column
/// player's action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPayoffGame")]
pub struct PayoffGame {
    id: String,
    n_actions: usize,
    u1: Matrix,
    u2: Matrix,
    symmetric: bool,
}

#[derive(Deserialize)]
struct RawPayoffGame {
    id: String,
    n_actions: usize,
    u1: Matrix,
    u2: Matrix,
    #[serde(default)]
    symmetric: bool,
}

impl TryFrom<RawPayoffGame> for PayoffGame {
    type Error = Error;

    fn try_from(raw: RawPayoffGame) -> Result<Self> {
        if raw.u1.size() != raw.n_actions {
            return Err(Error::ShapeMismatch(format!(
                "n_actions is {} but u1 is {}x{}",
                raw.n_actions,
                raw.u1.size(),
                raw.u1.size()
            )));
        }
        make_payoff_game(raw.id, raw.u1, raw.u2, raw.symmetric)
    }
}

/// Validates and builds a payoff game.
pub fn make_payoff_game(id: impl Into<String>, u1: Matrix, u2: Matrix, symmetric: bool) -> Result<PayoffGame> {
    if u1.size() != u2.size() {
        return Err(Error::ShapeMismatch(format!(
            "u1 is {0}x{0} but u2 is {1}x{1}",
            u1.size(),
            u2.size()
        )));
    }
    if let Some((row, col)) = u1.first_non_finite().or_else(|| u2.first_non_finite()) {
        return Err(Error::NonFinitePayoff { row, col });
    }
    let n = u1.size();
    if symmetric {
        for r in 0..n {
            for c in 0..n {
                if u2.get(r, c) != u1.get(c, r) {
                    return Err(Error::SymmetryViolation { row: r, col: c });
                }
            }
        }
    }
    Ok(PayoffGame {
        id: id.into(),
        n_actions: n,
        u1,
        u2,
        symmetric,
    })
}

impl PayoffGame {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn u1(&self) -> &Matrix {
        &self.u1
    }

    pub fn u2(&self) -> &Matrix {
        &self.u2
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Utility of `player` (0 = row, 1 = column) when it plays `own` and
    /// the opponent plays `opp`.
    #[inline]
    pub fn utility(&self, player: usize, own: usize, opp: usize) -> f64 {
        if player == 0 {
            self.u1.get(own, opp)
        } else {
            self.u2.get(opp, own)
        }
    }

    /// Utility of the opponent of `player` at the same outcome.
    #[inline]
    pub fn opponent_utility(&self, player: usize, own: usize, opp: usize) -> f64 {
        self.utility(1 - player, opp, own)
    }

    /// Largest utility entry over both players and all cells.
    pub fn max_utility(&self) -> f64 {
        self.u1
            .values()
            .iter()
            .chain(self.u2.values())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expected utility of every action of `player` against `opp`.
    pub fn expected_utilities(&self, player: usize, opp: &[f64]) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| {
                opp.iter()
                    .enumerate()
                    .map(|(b, &q)| q * self.utility(player, a, b))
                    .sum()
            })
            .collect()
    }
}

fn check_player(player: usize) -> Result<()> {
    if player > 1 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: player + 1,
        });
    }
    Ok(())
}

/// Expected utility of `player` playing `action` against the mixed strategy `opp`.
pub fn expected_utility(g: &PayoffGame, player: usize, action: usize, opp: &MixedStrategy) -> Result<f64> {
    check_player(player)?;
    if opp.len() != g.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: g.n_actions(),
            found: opp.len(),
        });
    }
    if action >= g.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: g.n_actions(),
            found: action + 1,
        });
    }
    Ok(opp
        .probs()
        .iter()
        .enumerate()
        .map(|(b, &q)| q * g.utility(player, action, b))
        .sum())
}

/// Symmetric game with i.i.d. Uniform[lo, hi] row-player utilities and `u2 = u1ᵀ`.
pub fn random_payoff_game<R: Rng + ?Sized>(
    id: impl Into<String>,
    rng: &mut R,
    n_actions: usize,
    lo: f64,
    hi: f64,
) -> Result<PayoffGame> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || n_actions < 2 {
        return Err(Error::InvalidRange { lo, hi, n_actions });
    }
    let dist = Uniform::new_inclusive(lo, hi).map_err(|_| Error::InvalidRange { lo, hi, n_actions })?;
    let u1 = Matrix::from_fn(n_actions, |_, _| dist.sample(rng));
    let u2 = u1.transpose();
    make_payoff_game(id, u1, u2, true)
}

/// Game whose outcomes are (allocation, payment) pairs; utility is `v * x + p`.
///
/// `v_star` records the valuation the game was generated with. Estimators
/// never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAllocationGame")]
pub struct AllocationGame {
    id: String,
    x1: Matrix,
    x2: Matrix,
    p1: Matrix,
    p2: Matrix,
    v_star: f64,
}

#[derive(Deserialize)]
struct RawAllocationGame {
    id: String,
    x1: Matrix,
    x2: Matrix,
    p1: Matrix,
    p2: Matrix,
    v_star: f64,
}

impl TryFrom<RawAllocationGame> for AllocationGame {
    type Error = Error;

    fn try_from(raw: RawAllocationGame) -> Result<Self> {
        AllocationGame::new(raw.id, raw.x1, raw.x2, raw.p1, raw.p2, raw.v_star)
    }
}

impl AllocationGame {
    pub fn new(id: impl Into<String>, x1: Matrix, x2: Matrix, p1: Matrix, p2: Matrix, v_star: f64) -> Result<Self> {
        let n = x1.size();
        if [&x2, &p1, &p2].iter().any(|m| m.size() != n) {
            return Err(Error::ShapeMismatch(
                "allocation and payment matrices differ in size".into(),
            ));
        }
        for m in [&x1, &x2, &p1, &p2] {
            if let Some((row, col)) = m.first_non_finite() {
                return Err(Error::NonFinitePayoff { row, col });
            }
        }
        if x1.values().iter().chain(x2.values()).any(|&x| x < 0.0) {
            return Err(Error::InvalidSpec("allocations must be nonnegative".into()));
        }
        if !(v_star > 0.0) || !v_star.is_finite() {
            return Err(Error::NonPositiveValue(v_star));
        }
        Ok(AllocationGame {
            id: id.into(),
            x1,
            x2,
            p1,
            p2,
            v_star,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_actions(&self) -> usize {
        self.x1.size()
    }

    pub fn x1(&self) -> &Matrix {
        &self.x1
    }

    pub fn x2(&self) -> &Matrix {
        &self.x2
    }

    pub fn p1(&self) -> &Matrix {
        &self.p1
    }

    pub fn p2(&self) -> &Matrix {
        &self.p2
    }

    /// The valuation used to generate this game. Only evaluation code reads it.
    pub fn v_star(&self) -> f64 {
        self.v_star
    }
}

/// Maps a payoff game to an allocation game at valuation `v_star`.
///
/// Each (player, cell) draws `x ~ U(0, max(u(G)) / v_star)` independently,
/// row player's cells first in row-major order, then the column player's,
/// and sets `p = u - x * v_star`. With `zero_payment`, `x = u / v_star` and
/// `p = 0` instead.
pub fn allocation_from_payoff<R: Rng + ?Sized>(
    g: &PayoffGame,
    v_star: f64,
    rng: &mut R,
    zero_payment: bool,
) -> Result<AllocationGame> {
    if !(v_star > 0.0) || !v_star.is_finite() {
        return Err(Error::NonPositiveValue(v_star));
    }
    let n = g.n_actions();
    let mut xs = [Matrix::zeros(n), Matrix::zeros(n)];
    let mut ps = [Matrix::zeros(n), Matrix::zeros(n)];
    if zero_payment {
        for (k, u) in [g.u1(), g.u2()].into_iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    let util = u.get(r, c);
                    if util < 0.0 {
                        return Err(Error::InvalidSpec(
                            "zero-payment mapping needs nonnegative utilities".into(),
                        ));
                    }
                    xs[k].set(r, c, util / v_star);
                }
            }
        }
    } else {
        let upper = g.max_utility().max(0.0) / v_star;
        for (k, u) in [g.u1(), g.u2()].into_iter().enumerate() {
            for r in 0..n {
                for c in 0..n {
                    let x = if upper > 0.0 { rng.random::<f64>() * upper } else { 0.0 };
                    xs[k].set(r, c, x);
                    ps[k].set(r, c, u.get(r, c) - x * v_star);
                }
            }
        }
    }
    let [x1, x2] = xs;
    let [p1, p2] = ps;
    AllocationGame::new(g.id(), x1, x2, p1, p2, v_star)
}

/// Payoff game induced by valuing allocations at `v`: `u = v * x + p` per cell.
pub fn induce_payoff_game(a: &AllocationGame, v: f64) -> PayoffGame {
    let n = a.n_actions();
    let u1 = Matrix::from_fn(n, |r, c| v * a.x1.get(r, c) + a.p1.get(r, c));
    let u2 = Matrix::from_fn(n, |r, c| v * a.x2.get(r, c) + a.p2.get(r, c));
    PayoffGame {
        id: a.id.clone(),
        n_actions: n,
        u1,
        u2,
        symmetric: false,
    }
}
