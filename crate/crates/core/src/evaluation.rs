//! Evaluation harness: scenarios, relative error, participant-level
//! cross-validation, t-intervals, the bootstrap threshold analysis and
//! held-out welfare prediction.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::PlayDataset;
use crate::error::{Error, Result};
use crate::estimation::{fit_panel, maximize_likelihood_with, EstimationResult, FitOptions};
use crate::games::{allocation_from_payoff, induce_payoff_game, AllocationGame, MixedStrategy, PayoffGame};
use crate::likelihood::Panel;
use crate::models::{
    level0_predict, model_predict, pqch_predict, qre_fixed_point, ModelSpec, Strategic, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::numeric::{derive_seed, median, quantile};

/// One allocation mapping of a set of payoff games at a fixed endowed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub v_star: f64,
    pub index: usize,
    pub seed: u64,
    pub allocation_games: Vec<AllocationGame>,
}

/// `k` independent allocation mappings of `games` at `v_star`.
pub fn make_scenarios<R: Rng + ?Sized>(
    games: &[PayoffGame],
    v_star: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Scenario>> {
    make_scenarios_with(games, v_star, k, false, rng)
}

pub fn make_scenarios_with<R: Rng + ?Sized>(
    games: &[PayoffGame],
    v_star: f64,
    k: usize,
    zero_payment: bool,
    rng: &mut R,
) -> Result<Vec<Scenario>> {
    if !(v_star > 0.0) || !v_star.is_finite() {
        return Err(Error::NonPositiveValue(v_star));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("need at least one scenario".into()));
    }
    let base: u64 = rng.random();
    (0..k)
        .map(|index| {
            let seed = derive_seed(base, "scenario", index as u64);
            let mut srng = ChaCha8Rng::seed_from_u64(seed);
            let allocation_games = games
                .iter()
                .map(|g| allocation_from_payoff(g, v_star, &mut srng, zero_payment))
                .collect::<Result<Vec<_>>>()?;
            Ok(Scenario {
                v_star,
                index,
                seed,
                allocation_games,
            })
        })
        .collect()
}

/// `|v_hat - v_star| / v_star`.
pub fn relative_error(v_hat: f64, v_star: f64) -> Result<f64> {
    if !(v_star > 0.0) || !v_star.is_finite() {
        return Err(Error::NonPositiveValue(v_star));
    }
    Ok((v_hat - v_star).abs() / v_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TInterval {
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

impl TInterval {
    pub fn overlaps(&self, other: &TInterval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

/// Student-t confidence interval for the mean of `samples`.
pub fn t_confidence_interval(samples: &[f64], level: f64) -> Result<TInterval> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    if samples.iter().all(|&x| x == samples[0]) {
        let c = samples[0];
        return Ok(TInterval {
            lower: c,
            mean: c,
            upper: c,
        });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = t * (var / nf).sqrt();
    Ok(TInterval {
        lower: mean - half,
        mean,
        upper: mean + half,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEstimate {
    pub round: usize,
    pub fold: usize,
    pub v_hat: f64,
    /// Held-out log-likelihood per observation.
    pub test_loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub mean_v_hat: f64,
    pub mean_test_loglik: f64,
    pub folds: Vec<FoldEstimate>,
}

/// Disjoint, covering assignment of participant indices to folds.
pub fn fold_assignment<R: Rng + ?Sized>(n: usize, folds: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        out[pos % folds].push(idx);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

/// Repeated k-fold cross-validation over participants. Each fold is fitted
/// on the others; its held-out likelihood uses empirical distributions from
/// the full dataset.
pub fn cross_validate<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    m: &ModelSpec,
    folds: usize,
    rounds: usize,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<CrossValidation> {
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    if rounds == 0 {
        return Err(Error::InvalidConfig("need at least 1 round".into()));
    }
    let participants = d.participants();
    if participants.len() < folds {
        return Err(Error::TooFewParticipants {
            needed: folds,
            found: participants.len(),
        });
    }
    let base: u64 = rng.random();
    let mut tasks = Vec::new();
    for round in 0..rounds {
        let mut rrng = ChaCha8Rng::seed_from_u64(derive_seed(base, "cv-round", round as u64));
        for (fold, members) in fold_assignment(participants.len(), folds, &mut rrng)
            .into_iter()
            .enumerate()
        {
            tasks.push((round, fold, members));
        }
    }
    let results: Vec<FoldEstimate> = tasks
        .into_par_iter()
        .map(|(round, fold, members)| {
            let test: HashSet<&str> = members.iter().map(|&i| participants[i].as_str()).collect();
            let train: HashSet<&str> = participants
                .iter()
                .map(String::as_str)
                .filter(|p| !test.contains(p))
                .collect();
            let train_panel = Panel::new(&d.with_participants(&train), games)?;
            let seed = derive_seed(base, "cv-fit", (round * folds + fold) as u64);
            let fit = fit_panel(&train_panel, m, opts, seed)?;
            let test_panel = Panel::scoring(d, games, &test)?;
            let ll = test_panel.loglik(&fit.theta_hat, fit.v_hat, opts.pqch_form)?;
            Ok(FoldEstimate {
                round,
                fold,
                v_hat: fit.v_hat,
                test_loglik: ll / test_panel.n_observations() as f64,
                converged: fit.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    Ok(CrossValidation {
        mean_v_hat: results.iter().map(|f| f.v_hat).sum::<f64>() / n,
        mean_test_loglik: results.iter().map(|f| f.test_loglik).sum::<f64>() / n,
        folds: results,
    })
}

/// Anything that produces a value estimate from data and a scenario.
pub trait ValueEstimator: Sync {
    fn label(&self) -> String;
    fn estimate(&self, d: &PlayDataset, scenario: &Scenario, seed: u64) -> Result<f64>;
}

/// Maximum-likelihood estimator for a model.
#[derive(Debug, Clone)]
pub struct ModelEstimator {
    pub model: ModelSpec,
    pub opts: FitOptions,
}

impl ValueEstimator for ModelEstimator {
    fn label(&self) -> String {
        self.model.label()
    }

    fn estimate(&self, d: &PlayDataset, scenario: &Scenario, seed: u64) -> Result<f64> {
        let panel = Panel::new(d, &scenario.allocation_games)?;
        Ok(fit_panel(&panel, &self.model, &self.opts, seed)?.v_hat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub model: String,
    pub alpha: f64,
    pub median_fraction: f64,
    /// Middle 95% of the resampled fractions.
    pub band_lower: f64,
    pub band_upper: f64,
    pub fractions: Vec<f64>,
}

/// For each of `b` participant resamples and each estimator, the fraction of
/// scenarios whose relative error falls below `alpha`.
pub fn bootstrap_threshold<R: Rng + ?Sized>(
    d: &PlayDataset,
    estimators: &[&dyn ValueEstimator],
    scenarios: &[Scenario],
    alpha: f64,
    b: usize,
    rng: &mut R,
) -> Result<Vec<ThresholdSummary>> {
    if b == 0 {
        return Err(Error::InvalidConfig("need at least one bootstrap resample".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidConfig("no scenarios".into()));
    }
    let n = d.participants().len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let base: u64 = rng.random();
    let tasks: Vec<(usize, usize, usize)> = (0..b)
        .flat_map(|r| (0..estimators.len()).flat_map(move |e| (0..scenarios.len()).map(move |s| (r, e, s))))
        .collect();
    let resamples: Vec<PlayDataset> = (0..b)
        .map(|r| {
            let mut rrng = ChaCha8Rng::seed_from_u64(derive_seed(base, "bootstrap", r as u64));
            let picks: Vec<usize> = (0..n).map(|_| rrng.random_range(0..n)).collect();
            d.resample_participants(&picks)
        })
        .collect();
    let hits: Vec<bool> = tasks
        .par_iter()
        .map(|&(r, e, s)| {
            let seed = derive_seed(
                base,
                "bootstrap-fit",
                ((r * estimators.len() + e) * scenarios.len() + s) as u64,
            );
            let v_hat = estimators[e].estimate(&resamples[r], &scenarios[s], seed)?;
            Ok(relative_error(v_hat, scenarios[s].v_star)? < alpha)
        })
        .collect::<Result<Vec<_>>>()?;
    let per = scenarios.len();
    Ok(estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let fractions: Vec<f64> = (0..b)
                .map(|r| {
                    let start = (r * estimators.len() + e) * per;
                    hits[start..start + per].iter().filter(|&&h| h).count() as f64 / per as f64
                })
                .collect();
            ThresholdSummary {
                model: est.label(),
                alpha,
                median_fraction: median(&fractions),
                band_lower: quantile(&fractions, 0.025),
                band_upper: quantile(&fractions, 0.975),
                fractions,
            }
        })
        .collect())
}

/// Which games are used for fitting in the welfare evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WelfareSplit {
    /// A seeded random half.
    Random,
    /// These game ids (exactly half of the games).
    Fixed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameWelfare {
    pub game: String,
    pub predicted: f64,
    pub empirical: f64,
    pub relative_error: f64,
    /// True when the equilibrium solver failed and the prediction responded
    /// to the observed play instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareOutcome {
    pub relative_error: f64,
    pub train_games: Vec<String>,
    pub games: Vec<GameWelfare>,
    pub fit: EstimationResult,
}

/// Observed action distribution in `game`, over all participants.
fn observed_distribution(d: &PlayDataset, game: &str, n: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n];
    for o in d.observations().iter().filter(|o| o.game == game) {
        counts[o.action] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// Predicted play of both players in `g` under fitted `m`. Equilibrium
/// models solve for the fixed point; if that fails they respond to `observed`.
fn predicted_profile(m: &ModelSpec, g: &PayoffGame, observed: &[f64]) -> Result<([MixedStrategy; 2], bool)> {
    match m.strategic {
        Strategic::None => {
            let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
            Ok(([level0_predict(l0, g, 0)?, level0_predict(l0, g, 1)?], false))
        }
        Strategic::PQCH => {
            let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
            Ok((
                [
                    pqch_predict(g, 0, m.tau(), m.lambda(), l0)?.0,
                    pqch_predict(g, 1, m.tau(), m.lambda(), l0)?.0,
                ],
                false,
            ))
        }
        Strategic::Nash | Strategic::QRE => {
            let l0 = m.nonstrategic.as_ref();
            match qre_fixed_point(g, m.lambda(), m.beta(), l0, DEFAULT_TOL, DEFAULT_MAX_ITER) {
                Ok(profile) => Ok((
                    [
                        profile.population(g, 0, m.beta(), l0),
                        profile.population(g, 1, m.beta(), l0),
                    ],
                    false,
                )),
                Err(Error::NoConvergence { .. }) => {
                    let emp = MixedStrategy::new(observed.to_vec())?;
                    Ok((
                        [model_predict(m, g, 0, Some(&emp))?, model_predict(m, g, 1, Some(&emp))?],
                        true,
                    ))
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Expected payoff of the row player when both sides play independently.
pub fn expected_welfare(g: &PayoffGame, row: &[f64], col: &[f64]) -> f64 {
    row.iter()
        .enumerate()
        .map(|(a, p)| p * col.iter().enumerate().map(|(b, q)| q * g.utility(0, a, b)).sum::<f64>())
        .sum()
}

/// Realized average payoff of the observations in `game`, scored in `g`.
/// Observations without an opponent action are scored against `observed`.
fn empirical_welfare(d: &PlayDataset, game: &str, g: &PayoffGame, observed: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for o in d.observations().iter().filter(|o| o.game == game) {
        total += match o.opponent_action {
            Some(b) => g.utility(0, o.action, b),
            None => observed
                .iter()
                .enumerate()
                .map(|(b, q)| q * g.utility(0, o.action, b))
                .sum(),
        };
        n += 1;
    }
    total / n as f64
}

/// Fits `m` on half of the games and compares predicted with realized
/// welfare on the other half, averaging the relative error per game.
pub fn welfare_prediction<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    m: &ModelSpec,
    split: &WelfareSplit,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<WelfareOutcome> {
    let ids = d.games();
    if !ids.len().is_multiple_of(2) {
        return Err(Error::OddGameCount(ids.len()));
    }
    let train: Vec<String> = match split {
        WelfareSplit::Random => {
            let mut shuffled = ids.to_vec();
            shuffled.shuffle(rng);
            shuffled.truncate(ids.len() / 2);
            let keep: HashSet<&String> = shuffled.iter().collect();
            ids.iter().filter(|g| keep.contains(g)).cloned().collect()
        }
        WelfareSplit::Fixed(list) => {
            let known: HashSet<&String> = ids.iter().collect();
            if let Some(bad) = list.iter().find(|g| !known.contains(g)) {
                return Err(Error::UnknownGame(bad.clone()));
            }
            let unique: HashSet<&String> = list.iter().collect();
            if unique.len() != ids.len() / 2 || list.len() != unique.len() {
                return Err(Error::InvalidConfig(format!(
                    "fixed split must list {} distinct games",
                    ids.len() / 2
                )));
            }
            ids.iter().filter(|g| unique.contains(g)).cloned().collect()
        }
    };
    let train_set: HashSet<&str> = train.iter().map(String::as_str).collect();
    let fit = maximize_likelihood_with(&d.with_games(&train_set), games, m, opts, rng)?;

    let mut per_game = Vec::new();
    for id in ids.iter().filter(|g| !train_set.contains(g.as_str())) {
        let alloc = games
            .iter()
            .find(|g| g.id() == id)
            .ok_or_else(|| Error::UnknownGame(id.clone()))?;
        let observed = observed_distribution(d, id, alloc.n_actions());
        let fitted_game = induce_payoff_game(alloc, fit.v_hat);
        let ([row, col], fallback) = predicted_profile(&fit.theta_hat, &fitted_game, &observed)?;
        let predicted = expected_welfare(&fitted_game, row.probs(), col.probs());
        let true_game = induce_payoff_game(alloc, alloc.v_star());
        let empirical = empirical_welfare(d, id, &true_game, &observed);
        let relative_error = if predicted == empirical {
            0.0
        } else {
            (predicted - empirical).abs() / empirical.abs()
        };
        per_game.push(GameWelfare {
            game: id.clone(),
            predicted,
            empirical,
            relative_error,
            fallback,
        });
    }
    let relative_error = per_game.iter().map(|g| g.relative_error).sum::<f64>() / per_game.len() as f64;
    Ok(WelfareOutcome {
        relative_error,
        train_games: train,
        games: per_game,
        fit,
    })
}

/// One cell of the evaluation tables: a model at an endowed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub v_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<TInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welfare_error: Option<TInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cv_estimates: Vec<f64>,
}

impl EvalRecord {
    pub fn new(model: impl Into<String>, v_star: f64) -> Self {
        EvalRecord {
            model: model.into(),
            v_star,
            relative_error: None,
            welfare_error: None,
            threshold: None,
            cv_estimates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    /// Folds `other` into this report, filling the fields of matching
    /// (model, v*) records and appending new ones.
    pub fn merge(&mut self, other: EvalReport) {
        for rec in other.records {
            match self
                .records
                .iter_mut()
                .find(|r| r.model == rec.model && r.v_star == rec.v_star)
            {
                Some(existing) => {
                    if rec.relative_error.is_some() {
                        existing.relative_error = rec.relative_error;
                    }
                    if rec.welfare_error.is_some() {
                        existing.welfare_error = rec.welfare_error;
                    }
                    if rec.threshold.is_some() {
                        existing.threshold = rec.threshold;
                    }
                    if !rec.cv_estimates.is_empty() {
                        existing.cv_estimates = rec.cv_estimates;
                    }
                }
                None => self.records.push(rec),
            }
        }
    }
}

/// Marker for a table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Best,
    TiedBest,
    None,
}

impl Mark {
    pub fn label(self) -> &'static str {
        match self {
            Mark::Best => "best",
            Mark::TiedBest => "tied_best",
            Mark::None => "",
        }
    }
}

/// Marks the best interval (lowest mean, or highest when `higher_is_better`)
/// as `best`, unless other intervals overlap it; then it and every
/// overlapping interval are `tied_best`.
pub fn mark_best(cells: &[Option<TInterval>], higher_is_better: bool) -> Vec<Mark> {
    let mut marks = vec![Mark::None; cells.len()];
    let best = cells.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c))).fold(
        None::<(usize, TInterval)>,
        |acc, (i, c)| match acc {
            Some((_, b)) if (higher_is_better && b.mean >= c.mean) || (!higher_is_better && b.mean <= c.mean) => acc,
            _ => Some((i, c)),
        },
    );
    let Some((bi, b)) = best else {
        return marks;
    };
    let tied: Vec<usize> = cells
        .iter()
        .enumerate()
        .filter(|(i, c)| *i != bi && c.is_some_and(|c| c.overlaps(&b)))
        .map(|(i, _)| i)
        .collect();
    if tied.is_empty() {
        marks[bi] = Mark::Best;
    } else {
        marks[bi] = Mark::TiedBest;
        for i in tied {
            marks[i] = Mark::TiedBest;
        }
    }
    marks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::games::{make_payoff_game, random_payoff_game, Matrix};
    use crate::models::Level0Spec;

    fn payoff_games(n: usize) -> Vec<PayoffGame> {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        (0..n)
            .map(|i| random_payoff_game(format!("g{i}"), &mut rng, 3, 0.0, 100.0).unwrap())
            .collect()
    }

    #[test]
    fn relative_error_examples() {
        assert!((relative_error(9.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(relative_error(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(relative_error(30.0, 10.0).unwrap(), 2.0);
        assert!(matches!(relative_error(1.0, 0.0), Err(Error::NonPositiveValue(_))));
    }

    #[test]
    fn scenarios_round_trip_and_repeat() {
        let games = payoff_games(4);
        let s = make_scenarios(&games, 20.0, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.len(), 3);
        for sc in &s {
            for (a, g) in sc.allocation_games.iter().zip(&games) {
                let back = induce_payoff_game(a, 20.0);
                for (x, y) in back.u1().values().iter().zip(g.u1().values()) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
        assert_ne!(s[0].allocation_games, s[1].allocation_games);
        let again = make_scenarios(&games, 20.0, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s, again);
        assert!(make_scenarios(&games, -1.0, 1, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn t_interval_cases() {
        let c = t_confidence_interval(&[0.1, 0.1, 0.1], 0.95).unwrap();
        assert_eq!((c.lower, c.mean, c.upper), (0.1, 0.1, 0.1));
        let t = t_confidence_interval(&[0.0, 2.0], 0.95).unwrap();
        assert!((t.mean - 1.0).abs() < 1e-15);
        assert!((t.upper - t.mean - 12.7062).abs() < 1e-3);
        let wide = t_confidence_interval(&[0.0, 2.0], 0.99).unwrap();
        assert!(wide.upper >= t.upper && wide.lower <= t.lower);
        assert!(matches!(
            t_confidence_interval(&[1.0], 0.95),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn folds_partition_participants() {
        let f = fold_assignment(23, 5, &mut ChaCha8Rng::seed_from_u64(4));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|x| x.len() == 4 || x.len() == 5));
    }

    struct Fixed(f64);

    impl ValueEstimator for Fixed {
        fn label(&self) -> String {
            format!("x{}", self.0)
        }

        fn estimate(&self, _: &PlayDataset, s: &Scenario, _: u64) -> Result<f64> {
            Ok(self.0 * s.v_star)
        }
    }

    #[test]
    fn bootstrap_with_fixed_estimators() {
        let games = payoff_games(2);
        let scenarios = make_scenarios(&games, 10.0, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let d = PlayDataset::new(vec![Observation::new("a", "g0", 0), Observation::new("b", "g0", 1)]).unwrap();
        let perfect = Fixed(1.0);
        let off = Fixed(10.0);
        let out = bootstrap_threshold(
            &d,
            &[&perfect, &off],
            &scenarios,
            0.1,
            5,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(out[0].median_fraction, 1.0);
        assert_eq!((out[0].band_lower, out[0].band_upper), (1.0, 1.0));
        assert_eq!(out[1].median_fraction, 0.0);
        let one = bootstrap_threshold(&d, &[&perfect], &scenarios, 0.1, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(one[0].median_fraction, one[0].fractions[0]);
    }

    #[test]
    fn uniform_welfare_is_grand_mean() {
        let g = &payoff_games(1)[0];
        let u = [1.0 / 3.0; 3];
        let grand = g.u1().values().iter().sum::<f64>() / 9.0;
        assert!((expected_welfare(g, &u, &u) - grand).abs() < 1e-12);
    }

    #[test]
    fn constant_payoffs_give_zero_welfare_error() {
        // No allocation and constant payment: every valuation yields the same game.
        let zero = Matrix::zeros(3);
        let pay = Matrix::from_fn(3, |_, _| 40.0);
        let games: Vec<AllocationGame> = (0..2)
            .map(|i| {
                AllocationGame::new(
                    format!("c{i}"),
                    zero.clone(),
                    zero.clone(),
                    pay.clone(),
                    pay.clone(),
                    10.0,
                )
                .unwrap()
            })
            .collect();
        let mut obs = Vec::new();
        for p in 0..6 {
            for g in 0..2 {
                obs.push(Observation::new(format!("p{p}"), format!("c{g}"), (p + g) % 3));
            }
        }
        let d = PlayDataset::new(obs).unwrap();
        let m = ModelSpec::nonstrategic_only(Level0Spec::uniform());
        let out = welfare_prediction(
            &d,
            &games,
            &m,
            &WelfareSplit::Random,
            &FitOptions::with_restarts(1),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.relative_error, 0.0);
        assert_eq!(out.games.len(), 1);
    }

    #[test]
    fn odd_game_count_rejected() {
        let g = make_payoff_game("g", Matrix::zeros(2), Matrix::zeros(2), true).unwrap();
        let alloc = allocation_from_payoff(&g, 1.0, &mut ChaCha8Rng::seed_from_u64(0), false).unwrap();
        let d = PlayDataset::new(vec![Observation::new("a", "g", 0)]).unwrap();
        let m = ModelSpec::nonstrategic_only(Level0Spec::uniform());
        assert!(matches!(
            welfare_prediction(
                &d,
                &[alloc],
                &m,
                &WelfareSplit::Random,
                &FitOptions::default(),
                &mut ChaCha8Rng::seed_from_u64(0)
            ),
            Err(Error::OddGameCount(1))
        ));
    }

    #[test]
    fn marking_rules() {
        let iv = |lo: f64, hi: f64| {
            Some(TInterval {
                lower: lo,
                mean: 0.5 * (lo + hi),
                upper: hi,
            })
        };
        assert_eq!(mark_best(&[iv(0.0, 1.0)], false), vec![Mark::Best]);
        assert_eq!(
            mark_best(&[iv(0.0, 1.0), iv(0.5, 2.0)], false),
            vec![Mark::TiedBest, Mark::TiedBest]
        );
        assert_eq!(
            mark_best(&[iv(0.0, 1.0), iv(2.0, 3.0)], false),
            vec![Mark::Best, Mark::None]
        );
        assert_eq!(
            mark_best(&[iv(0.0, 1.0), iv(2.0, 3.0)], true),
            vec![Mark::None, Mark::Best]
        );
        assert_eq!(mark_best(&[None, iv(2.0, 3.0)], false), vec![Mark::None, Mark::Best]);
    }
}
