//! Log-likelihood of observed panel play under each model family.
//!
//! A [`Panel`] indexes a dataset against its allocation games once, so
//! repeated evaluation during optimization only recomputes model
//! predictions. Leave-one-out empirical distributions depend only on the
//! data and are derived from cached per-game action counts.

mod params;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use params::{
    pack_params, unpack_params, FittedParams, ParamSchema, ParamSlot, ParamVector, LAMBDA0_BOUNDS, LAMBDA_BOUNDS,
    LOGIT_BOUND, TAU_BOUNDS, VALUE_BOUNDS,
};

pub use crate::data::{Observation, PlayDataset};
use crate::error::{Error, Result};
use crate::games::{induce_payoff_game, AllocationGame, PayoffGame};
use crate::models::{
    level0_probs, level_strategies, qbr_probs, truncated_poisson, Level0Spec, ModelSpec, Strategic, NASH_LAMBDA,
};
use crate::numeric::{logsumexp, pairwise_sum, PROB_FLOOR};

/// How PQCH levels relate across one participant's games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PqchForm {
    /// Level redrawn for every observation (mixture inside each term).
    #[default]
    PerObservation,
    /// One level per participant (product over games inside the mixture).
    StableLevel,
}

/// Per-game, per-level action probabilities `[game][level][action]`.
type LevelTables = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
struct ScoredParticipant {
    /// Indices into `Panel::scored` for this participant.
    start: usize,
    end: usize,
}

/// Dataset compiled against a set of allocation games.
#[derive(Debug, Clone)]
pub struct Panel {
    games: Vec<AllocationGame>,
    game_ids: Vec<String>,
    /// Action counts of every participant in the reference data, per game.
    counts: Vec<Vec<usize>>,
    /// Scored observations `(game index, action)`, grouped by participant.
    scored: Vec<(usize, usize)>,
    scored_participants: Vec<(String, ScoredParticipant)>,
    /// Which (game, action) cells occur among scored observations.
    used: Vec<Vec<bool>>,
}

impl Panel {
    /// Scores every observation of `d`.
    pub fn new(d: &PlayDataset, games: &[AllocationGame]) -> Result<Self> {
        Self::build(d, games, None)
    }

    /// Scores only the observations of `participants`, with empirical
    /// distributions drawn from all of `d`.
    pub fn scoring(d: &PlayDataset, games: &[AllocationGame], participants: &HashSet<&str>) -> Result<Self> {
        Self::build(d, games, Some(participants))
    }

    fn build(d: &PlayDataset, games: &[AllocationGame], only: Option<&HashSet<&str>>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let by_id: HashMap<&str, &AllocationGame> = games.iter().map(|g| (g.id(), g)).collect();
        let n_actions: HashMap<&str, usize> = games.iter().map(|g| (g.id(), g.n_actions())).collect();
        d.check_actions(&n_actions)?;

        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut compiled = Vec::new();
        for id in d.games() {
            let g = by_id.get(id.as_str()).ok_or_else(|| Error::UnknownGame(id.clone()))?;
            index.insert(id.as_str(), compiled.len());
            compiled.push((*g).clone());
        }
        let mut counts: Vec<Vec<usize>> = compiled.iter().map(|g| vec![0; g.n_actions()]).collect();
        let mut used: Vec<Vec<bool>> = compiled.iter().map(|g| vec![false; g.n_actions()]).collect();
        let mut grouped: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
        for obs in d.observations() {
            let gi = index[obs.game.as_str()];
            counts[gi][obs.action] += 1;
            if only.is_none_or(|set| set.contains(obs.participant.as_str())) {
                grouped
                    .entry(obs.participant.as_str())
                    .or_default()
                    .push((gi, obs.action));
                used[gi][obs.action] = true;
            }
        }
        let mut scored = Vec::new();
        let mut scored_participants = Vec::new();
        for p in d.participants() {
            if let Some(list) = grouped.remove(p.as_str()) {
                let start = scored.len();
                scored.extend(list);
                scored_participants.push((
                    p.clone(),
                    ScoredParticipant {
                        start,
                        end: scored.len(),
                    },
                ));
            }
        }
        if scored.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Panel {
            game_ids: compiled.iter().map(|g| g.id().to_string()).collect(),
            games: compiled,
            counts,
            scored,
            scored_participants,
            used,
        })
    }

    pub fn n_observations(&self) -> usize {
        self.scored.len()
    }

    pub fn n_participants(&self) -> usize {
        self.scored_participants.len()
    }

    pub fn games(&self) -> &[AllocationGame] {
        &self.games
    }

    fn induced(&self, v: f64) -> Vec<PayoffGame> {
        self.games.iter().map(|g| induce_payoff_game(g, v)).collect()
    }

    fn sum_terms(&self, table: &[Vec<f64>]) -> f64 {
        let terms: Vec<f64> = self.scored.iter().map(|&(g, a)| table[g][a]).collect();
        pairwise_sum(&terms)
    }

    fn participant_of(&self, game: usize, action: usize) -> String {
        self.scored_participants
            .iter()
            .find(|(_, r)| self.scored[r.start..r.end].contains(&(game, action)))
            .map(|(p, _)| p.clone())
            .unwrap_or_default()
    }

    /// Leave-one-out empirical distribution faced by a scorer who chose `action`.
    fn empirical(&self, game: usize, action: usize) -> Result<Vec<f64>> {
        let counts = &self.counts[game];
        let others = counts.iter().sum::<usize>() - 1;
        if others == 0 {
            return Err(Error::NoOtherObservations {
                game: self.game_ids[game].clone(),
                participant: self.participant_of(game, action),
            });
        }
        Ok(counts
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                let c = if b == action { c - 1 } else { c };
                c as f64 / others as f64
            })
            .collect())
    }

    /// Log-probabilities per (game, action) under the equilibrium mixture.
    fn equilibrium_table(&self, v: f64, lambda: f64, beta: f64, l0: Option<&Level0Spec>) -> Result<Vec<Vec<f64>>> {
        let induced = self.induced(v);
        let mut table = Vec::with_capacity(induced.len());
        for (gi, g) in induced.iter().enumerate() {
            let n = g.n_actions();
            let base = match l0 {
                Some(spec) if beta > 0.0 => Some(level0_probs(spec, g, 0)),
                _ => None,
            };
            let mut row = vec![f64::NEG_INFINITY; n];
            for a in 0..n {
                if !self.used[gi][a] {
                    continue;
                }
                let strategic = if beta < 1.0 {
                    let emp = self.empirical(gi, a)?;
                    qbr_probs(g, 0, &emp, lambda)[a]
                } else {
                    0.0
                };
                let p = match &base {
                    Some(p0) => beta * p0[a] + (1.0 - beta) * strategic,
                    None => strategic,
                };
                row[a] = p.max(PROB_FLOOR).ln();
            }
            table.push(row);
        }
        Ok(table)
    }

    /// Equilibrium-model log-likelihood: each scored action is drawn from
    /// `beta * level0 + (1 - beta) * QBR(leave-one-out empirical)` in the
    /// game induced at `v`.
    pub fn equilibrium(&self, v: f64, lambda: f64, beta: f64, l0: Option<&Level0Spec>) -> Result<f64> {
        check_value(v)?;
        check_lambda(lambda)?;
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::OutOfBounds(format!("beta = {beta}")));
        }
        if beta > 0.0 && l0.is_none() {
            return Err(Error::InvalidSpec("positive beta without a level-0 model".into()));
        }
        if let Some(spec) = l0 {
            spec.validate()?;
        }
        let table = self.equilibrium_table(v, lambda, beta, l0)?;
        Ok(self.sum_terms(&table))
    }

    /// Per-level log-probabilities `[game][level][action]` and the level weights.
    fn level_tables(
        &self,
        v: f64,
        lambda: f64,
        tau: f64,
        l0: &Level0Spec,
        max_level: usize,
    ) -> Result<(Vec<f64>, LevelTables)> {
        check_value(v)?;
        check_lambda(lambda)?;
        l0.validate()?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::OutOfBounds(format!("tau = {tau}")));
        }
        let levels = truncated_poisson(tau, max_level)?.probs().to_vec();
        let induced = self.induced(v);
        let per_level = induced
            .iter()
            .map(|g| {
                let [row, _] = level_strategies(g, &levels, lambda, l0);
                row
            })
            .collect();
        Ok((levels, per_level))
    }

    fn mixture_table(levels: &[f64], per_level: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        per_level
            .iter()
            .map(|strats| {
                let n = strats[0].len();
                (0..n)
                    .map(|a| {
                        let p: f64 = levels.iter().zip(strats).map(|(w, s)| w * s[a]).sum();
                        p.max(PROB_FLOOR).ln()
                    })
                    .collect()
            })
            .collect()
    }

    /// Poisson-QCH log-likelihood with the level redrawn for every observation.
    pub fn pqch(&self, v: f64, lambda: f64, tau: f64, l0: &Level0Spec) -> Result<f64> {
        self.pqch_with_levels(v, lambda, tau, l0, crate::models::MAX_LEVEL)
    }

    fn pqch_with_levels(&self, v: f64, lambda: f64, tau: f64, l0: &Level0Spec, max_level: usize) -> Result<f64> {
        let (levels, per_level) = self.level_tables(v, lambda, tau, l0, max_level)?;
        let table = Self::mixture_table(&levels, &per_level);
        Ok(self.sum_terms(&table))
    }

    /// Poisson-QCH log-likelihood with one level per participant:
    /// `Σ_i log Σ_ℓ L(ℓ) Π_g Pr(a_i^g | ℓ)`, evaluated in log space.
    pub fn stable_level(&self, v: f64, lambda: f64, tau: f64, l0: &Level0Spec) -> Result<f64> {
        self.stable_level_with_levels(v, lambda, tau, l0, crate::models::MAX_LEVEL)
    }

    fn stable_level_with_levels(
        &self,
        v: f64,
        lambda: f64,
        tau: f64,
        l0: &Level0Spec,
        max_level: usize,
    ) -> Result<f64> {
        let (levels, per_level) = self.level_tables(v, lambda, tau, l0, max_level)?;
        let mixture = Self::mixture_table(&levels, &per_level);
        let log_levels: Vec<f64> = levels.iter().map(|w| w.ln()).collect();
        let mut terms = Vec::with_capacity(self.scored_participants.len());
        for (_, range) in &self.scored_participants {
            let obs = &self.scored[range.start..range.end];
            if obs.len() == 1 {
                // A single game: the product has one factor, so this is the mixture term.
                let (g, a) = obs[0];
                terms.push(mixture[g][a]);
                continue;
            }
            let per_level_sums: Vec<f64> = log_levels
                .iter()
                .enumerate()
                .map(|(level, &log_w)| {
                    if log_w == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    let ll: f64 = obs
                        .iter()
                        .map(|&(g, a)| per_level[g][level][a].max(PROB_FLOOR).ln())
                        .sum();
                    log_w + ll
                })
                .collect();
            terms.push(logsumexp(&per_level_sums));
        }
        Ok(pairwise_sum(&terms))
    }

    /// Log-likelihood of a fully parameterized model at valuation `v`.
    pub fn loglik(&self, m: &ModelSpec, v: f64, form: PqchForm) -> Result<f64> {
        m.validate()?;
        match m.strategic {
            Strategic::None => {
                let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
                self.equilibrium(v, 0.0, 1.0, Some(l0))
            }
            Strategic::Nash | Strategic::QRE => self.equilibrium(v, m.lambda(), m.beta(), m.nonstrategic.as_ref()),
            Strategic::PQCH => {
                let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
                match form {
                    PqchForm::PerObservation => self.pqch_with_levels(v, m.lambda(), m.tau(), l0, m.max_level),
                    PqchForm::StableLevel => self.stable_level_with_levels(v, m.lambda(), m.tau(), l0, m.max_level),
                }
            }
        }
    }

    /// Model-predicted log-probability of every scored observation, in panel order.
    pub fn observation_terms(&self, m: &ModelSpec, v: f64) -> Result<Vec<f64>> {
        m.validate()?;
        let table = match m.strategic {
            Strategic::PQCH => {
                let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
                let (levels, per_level) = self.level_tables(v, m.lambda(), m.tau(), l0, m.max_level)?;
                Self::mixture_table(&levels, &per_level)
            }
            Strategic::None => {
                check_value(v)?;
                self.equilibrium_table(v, 0.0, 1.0, m.nonstrategic.as_ref())?
            }
            _ => {
                check_value(v)?;
                self.equilibrium_table(v, m.lambda(), m.beta(), m.nonstrategic.as_ref())?
            }
        };
        Ok(self.scored.iter().map(|&(g, a)| table[g][a]).collect())
    }
}

fn check_value(v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::OutOfBounds(format!("v = {v}")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfBounds(format!("lambda = {lambda}")));
    }
    Ok(())
}

/// Equilibrium-model log-likelihood. `Strategic::Nash` pins λ at
/// [`NASH_LAMBDA`] regardless of `lambda`.
pub fn loglik_equilibrium(
    d: &PlayDataset,
    games: &[AllocationGame],
    v: f64,
    lambda: f64,
    beta: f64,
    l0: Option<&Level0Spec>,
    strategic: Strategic,
) -> Result<f64> {
    let lambda = match strategic {
        Strategic::Nash => NASH_LAMBDA,
        Strategic::QRE => lambda,
        other => {
            return Err(Error::InvalidSpec(format!(
                "{} is not an equilibrium model",
                other.label()
            )))
        }
    };
    Panel::new(d, games)?.equilibrium(v, lambda, beta, l0)
}

/// Poisson-QCH log-likelihood with the level redrawn per observation.
pub fn loglik_pqch(
    d: &PlayDataset,
    games: &[AllocationGame],
    v: f64,
    lambda: f64,
    tau: f64,
    l0: &Level0Spec,
) -> Result<f64> {
    Panel::new(d, games)?.pqch(v, lambda, tau, l0)
}

/// Poisson-QCH log-likelihood with a stable level per participant.
pub fn loglik_stable_level(
    d: &PlayDataset,
    games: &[AllocationGame],
    v: f64,
    lambda: f64,
    tau: f64,
    l0: &Level0Spec,
) -> Result<f64> {
    Panel::new(d, games)?.stable_level(v, lambda, tau, l0)
}
