//! Synthetic panel data from a model with known valuation and parameters.
//!
//! Behavior in an allocation game at the endowed value is behavior in its
//! payoff game, so play is generated on the payoff games directly and the
//! allocation mapping is built separately (see [`allocation_games`]).

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Observation, PlayDataset};
use crate::error::{Error, Result};
use crate::estimation::{maximize_likelihood_with, EstimationResult, FitOptions};
use crate::evaluation::relative_error;
use crate::games::{allocation_from_payoff, AllocationGame, PayoffGame};
use crate::likelihood::FittedParams;
use crate::models::{level0_probs, level_strategies, qbr_probs, truncated_poisson, ModelSpec, Strategic};
use crate::numeric::derive_seed;

/// Whose actions a participant is paired against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// The immediately preceding participant.
    #[default]
    PreviousParticipant,
    /// A uniformly drawn earlier participant.
    EmpiricalPool,
}

/// How PQCH levels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelSampling {
    /// One level per participant, kept across games.
    #[default]
    Stable,
    /// A fresh level in every game.
    PerGame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: ModelSpec,
    pub v_star: f64,
    pub n_participants: usize,
    pub games: Vec<PayoffGame>,
    #[serde(default)]
    pub pairing: Pairing,
    pub seed: u64,
    #[serde(default)]
    pub level_sampling: LevelSampling,
    /// Build allocation games without payments (v is then unidentified).
    #[serde(default)]
    pub zero_payment: bool,
}

impl SimulationConfig {
    pub fn new(model: ModelSpec, v_star: f64, n_participants: usize, games: Vec<PayoffGame>, seed: u64) -> Self {
        SimulationConfig {
            model,
            v_star,
            n_participants,
            games,
            pairing: Pairing::default(),
            seed,
            level_sampling: LevelSampling::default(),
            zero_payment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.v_star > 0.0) || !self.v_star.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "v_star must be positive, got {}",
                self.v_star
            )));
        }
        if self.games.is_empty() {
            return Err(Error::InvalidConfig("no games".into()));
        }
        if self.n_participants == 0 {
            return Err(Error::InvalidConfig("no participants".into()));
        }
        if self.pairing == Pairing::PreviousParticipant && self.n_participants < 2 {
            return Err(Error::InvalidConfig(
                "previous-participant pairing needs at least 2 participants".into(),
            ));
        }
        Ok(())
    }
}

/// What generated a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSidecar {
    pub v_star: f64,
    pub model: ModelSpec,
    pub seed: u64,
    pub n_participants: usize,
    pub n_games: usize,
    pub pairing: Pairing,
    pub level_sampling: LevelSampling,
    pub zero_payment: bool,
}

impl SimulationSidecar {
    pub fn from_config(cfg: &SimulationConfig) -> Self {
        SimulationSidecar {
            v_star: cfg.v_star,
            model: cfg.model.clone(),
            seed: cfg.seed,
            n_participants: cfg.n_participants,
            n_games: cfg.games.len(),
            pairing: cfg.pairing,
            level_sampling: cfg.level_sampling,
            zero_payment: cfg.zero_payment,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }
}

fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // Rounding left u above the total: take the last action with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulates one panel: every participant plays every game once, in order.
pub fn simulate_dataset(cfg: &SimulationConfig) -> Result<PlayDataset> {
    cfg.validate()?;
    let m = &cfg.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Per-game quantities that do not depend on earlier play.
    let level0: Vec<Option<Vec<f64>>> = cfg
        .games
        .iter()
        .map(|g| m.nonstrategic.as_ref().map(|l0| level0_probs(l0, g, 0)))
        .collect();
    let (level_weights, per_level): (Vec<f64>, Vec<Vec<Vec<f64>>>) = if m.strategic == Strategic::PQCH {
        let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
        let levels = truncated_poisson(m.tau(), m.max_level)?.probs().to_vec();
        let tables = cfg
            .games
            .iter()
            .map(|g| {
                let [row, _] = level_strategies(g, &levels, m.lambda(), l0);
                row
            })
            .collect();
        (levels, tables)
    } else {
        (Vec::new(), Vec::new())
    };

    let mut history: Vec<Vec<usize>> = vec![Vec::new(); cfg.games.len()];
    let mut observations = Vec::with_capacity(cfg.n_participants * cfg.games.len());
    for i in 0..cfg.n_participants {
        let id = format!("s{i:04}");
        let stable_level = match (m.strategic, cfg.level_sampling) {
            (Strategic::PQCH, LevelSampling::Stable) => Some(sample(&level_weights, &mut rng)),
            _ => None,
        };
        let mut actions = Vec::with_capacity(cfg.games.len());
        for (gi, g) in cfg.games.iter().enumerate() {
            let n = g.n_actions();
            let probs = match m.strategic {
                Strategic::None => level0[gi].clone().ok_or_else(|| Error::InvalidSpec(m.label()))?,
                Strategic::Nash | Strategic::QRE => {
                    let prior = &history[gi];
                    let emp = if prior.is_empty() {
                        vec![1.0 / n as f64; n]
                    } else {
                        let mut c = vec![0.0; n];
                        for &a in prior {
                            c[a] += 1.0;
                        }
                        c.iter().map(|x| x / prior.len() as f64).collect()
                    };
                    let response = qbr_probs(g, 0, &emp, m.lambda());
                    match &level0[gi] {
                        Some(p0) => {
                            let beta = m.beta();
                            p0.iter()
                                .zip(&response)
                                .map(|(a, b)| beta * a + (1.0 - beta) * b)
                                .collect()
                        }
                        None => response,
                    }
                }
                Strategic::PQCH => {
                    let level = match stable_level {
                        Some(l) => l,
                        None => sample(&level_weights, &mut rng),
                    };
                    per_level[gi][level].clone()
                }
            };
            actions.push(sample(&probs, &mut rng));
        }
        for (gi, g) in cfg.games.iter().enumerate() {
            let prior = &history[gi];
            let opponent = match cfg.pairing {
                Pairing::PreviousParticipant => prior.last().copied(),
                Pairing::EmpiricalPool if prior.is_empty() => None,
                Pairing::EmpiricalPool => Some(prior[rng.random_range(0..prior.len())]),
            };
            observations.push(
                Observation::new(id.clone(), g.id(), actions[gi])
                    .with_opponent(opponent)
                    .with_order(Some(gi)),
            );
        }
        for (gi, a) in actions.into_iter().enumerate() {
            history[gi].push(a);
        }
    }
    PlayDataset::new(observations)
}

/// Allocation games for the configured payoff games at `v_star`, seeded from the config.
pub fn allocation_games(cfg: &SimulationConfig) -> Result<Vec<AllocationGame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "allocation", 0));
    cfg.games
        .iter()
        .map(|g| allocation_from_payoff(g, cfg.v_star, &mut rng, cfg.zero_payment))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub truth: FittedParams,
    pub estimate: EstimationResult,
    pub relative_error: f64,
}

/// Simulates from `cfg`, then fits `fit_model` to the result.
pub fn recovery_experiment(cfg: &SimulationConfig, fit_model: &ModelSpec, restarts: usize) -> Result<RecoveryOutcome> {
    recovery_experiment_with(cfg, fit_model, &FitOptions::with_restarts(restarts))
}

pub fn recovery_experiment_with(
    cfg: &SimulationConfig,
    fit_model: &ModelSpec,
    opts: &FitOptions,
) -> Result<RecoveryOutcome> {
    let d = simulate_dataset(cfg)?;
    let games = allocation_games(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "fit", 0));
    let estimate = maximize_likelihood_with(&d, &games, fit_model, opts, &mut rng)?;
    Ok(RecoveryOutcome {
        truth: FittedParams {
            v: cfg.v_star,
            model: cfg.model.clone(),
        },
        relative_error: relative_error(estimate.v_hat, cfg.v_star)?,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::random_payoff_game;
    use crate::models::Level0Spec;

    fn payoff_games(n: usize) -> Vec<PayoffGame> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| random_payoff_game(format!("g{i}"), &mut rng, 3, 0.0, 100.0).unwrap())
            .collect()
    }

    #[test]
    fn second_participant_faces_first() {
        let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 2, payoff_games(4), 1);
        let d = simulate_dataset(&cfg).unwrap();
        let obs = d.observations();
        for g in 0..4 {
            assert_eq!(obs[g].opponent_action, None);
            assert_eq!(obs[4 + g].opponent_action, Some(obs[g].action));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let m = ModelSpec::pqch(0.2, 1.5, Level0Spec::uniform());
        let cfg = SimulationConfig::new(m, 10.0, 30, payoff_games(3), 77);
        assert_eq!(simulate_dataset(&cfg).unwrap(), simulate_dataset(&cfg).unwrap());
    }

    #[test]
    fn pairing_needs_two_participants() {
        let cfg = SimulationConfig::new(ModelSpec::qre(0.1), 10.0, 1, payoff_games(1), 1);
        assert!(matches!(simulate_dataset(&cfg), Err(Error::InvalidConfig(_))));
        let pool = SimulationConfig {
            pairing: Pairing::EmpiricalPool,
            ..cfg
        };
        assert!(simulate_dataset(&pool).is_ok());
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let m = ModelSpec::nonstrategic_only(Level0Spec::uniform());
        let cfg = SimulationConfig::new(m, 10.0, 10_000, payoff_games(1), 3);
        let d = simulate_dataset(&cfg).unwrap();
        let mut counts = [0usize; 3];
        for o in d.observations() {
            counts[o.action] += 1;
        }
        let n: f64 = 10_000.0;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - n / 3.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn stable_levels_repeat_within_participant() {
        // λ large and τ moderate: level-1 players best respond, level-0 are uniform.
        let m = ModelSpec::pqch(5.0, 1.0, Level0Spec::uniform());
        let cfg = SimulationConfig::new(m, 10.0, 50, payoff_games(6), 9);
        assert!(simulate_dataset(&cfg).unwrap().len() == 300);
    }

    #[test]
    fn sample_respects_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }
}
