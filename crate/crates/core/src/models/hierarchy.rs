//! Poisson quantal cognitive hierarchy.

use serde::{Deserialize, Serialize};

use super::level0::{level0_probs, Level0Spec};
use super::qbr_probs;
use crate::error::{Error, Result};
use crate::games::{MixedStrategy, PayoffGame};

/// Highest level of reasoning in the truncated hierarchy.
pub const MAX_LEVEL: usize = 3;

/// Distribution over levels `0..=max_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    probs: Vec<f64>,
}

impl LevelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidStrategy(format!("bad level distribution {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidStrategy(format!("level probabilities sum to {total}")));
        }
        Ok(LevelDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_level(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Poisson(τ) restricted to `0..=max_level` and renormalized.
pub fn truncated_poisson(tau: f64, max_level: usize) -> Result<LevelDistribution> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::NegativeTau(tau));
    }
    // e^{-τ} cancels in the normalization, so weights are τ^ℓ / ℓ!.
    let mut weights = Vec::with_capacity(max_level + 1);
    let mut w = 1.0;
    weights.push(w);
    for level in 1..=max_level {
        w *= tau / level as f64;
        weights.push(w);
    }
    let total: f64 = weights.iter().sum();
    Ok(LevelDistribution {
        probs: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// Per-level strategies of both players: `out[player][level]`.
///
/// A level-k player quantally responds to the opponent's levels `0..k`
/// weighted by the level distribution conditioned on being below k. If
/// those levels carry no mass the lower levels are weighted equally.
pub(crate) fn level_strategies(g: &PayoffGame, levels: &[f64], lambda: f64, l0: &Level0Spec) -> [Vec<Vec<f64>>; 2] {
    let n = g.n_actions();
    let mut out = [vec![level0_probs(l0, g, 0)], vec![level0_probs(l0, g, 1)]];
    for k in 1..levels.len() {
        let mass: f64 = levels[..k].iter().sum();
        let mut next = [Vec::new(), Vec::new()];
        for player in 0..2 {
            let opp = &out[1 - player];
            let mut belief = vec![0.0; n];
            for (level, strat) in opp.iter().enumerate().take(k) {
                let w = if mass > 0.0 {
                    levels[level] / mass
                } else {
                    1.0 / k as f64
                };
                for (b, p) in belief.iter_mut().zip(strat) {
                    *b += w * p;
                }
            }
            next[player] = qbr_probs(g, player, &belief, lambda);
        }
        let [row, col] = next;
        out[0].push(row);
        out[1].push(col);
    }
    out
}

/// Level-weighted mixture plus the per-level strategies for `player`, using an
/// explicit level distribution.
pub fn qch_predict(
    g: &PayoffGame,
    player: usize,
    levels: &LevelDistribution,
    lambda: f64,
    l0: &Level0Spec,
) -> Result<(MixedStrategy, Vec<MixedStrategy>)> {
    if player > 1 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: player + 1,
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfBounds(format!("lambda = {lambda}")));
    }
    l0.validate()?;
    let per_level = level_strategies(g, levels.probs(), lambda, l0);
    let own = &per_level[player];
    let n = g.n_actions();
    let mut mix = vec![0.0; n];
    for (w, strat) in levels.probs().iter().zip(own) {
        for (m, p) in mix.iter_mut().zip(strat) {
            *m += w * p;
        }
    }
    let strategies = own.iter().map(|s| MixedStrategy::from_normalized(s.clone())).collect();
    Ok((MixedStrategy::from_normalized(mix), strategies))
}

/// Poisson-QCH prediction with levels truncated at [`MAX_LEVEL`].
pub fn pqch_predict(
    g: &PayoffGame,
    player: usize,
    tau: f64,
    lambda: f64,
    l0: &Level0Spec,
) -> Result<(MixedStrategy, Vec<MixedStrategy>)> {
    let levels = truncated_poisson(tau, MAX_LEVEL)?;
    qch_predict(g, player, &levels, lambda, l0)
}
