//! Behavioral models: predicted mixed strategies for every strategic and
//! non-strategic component.

mod equilibrium;
mod hierarchy;
mod level0;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use equilibrium::{qre_fixed_point, qre_residual, StrategyProfile, DEFAULT_DAMPING, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub(crate) use hierarchy::level_strategies;
pub use hierarchy::{pqch_predict, qch_predict, truncated_poisson, LevelDistribution, MAX_LEVEL};
pub(crate) use level0::level0_probs;
pub use level0::{
    level0_predict, ql4_features, rule_distributions, Level0Kind, Level0Spec, Level0Weights, Ql4Features, TIE_TOL,
};

use crate::data::PlayDataset;
use crate::error::{Error, Result};
use crate::games::{MixedStrategy, PayoffGame};
use crate::numeric::softmax_scaled;

/// Precision used to approximate best response for the Nash model.
pub const NASH_LAMBDA: f64 = 100.0;

pub(crate) fn qbr_probs(g: &PayoffGame, player: usize, opp: &[f64], lambda: f64) -> Vec<f64> {
    softmax_scaled(&g.expected_utilities(player, opp), lambda)
}

/// Logit quantal best response of `player` to `opp` with precision `lambda`.
pub fn qbr(g: &PayoffGame, player: usize, opp: &MixedStrategy, lambda: f64) -> Result<MixedStrategy> {
    if player > 1 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: player + 1,
        });
    }
    if opp.len() != g.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: g.n_actions(),
            found: opp.len(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfBounds(format!("lambda = {lambda}")));
    }
    Ok(MixedStrategy::from_normalized(qbr_probs(
        g,
        player,
        opp.probs(),
        lambda,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategic {
    None,
    Nash,
    QRE,
    PQCH,
}

impl Strategic {
    pub fn label(self) -> &'static str {
        match self {
            Strategic::None => "None",
            Strategic::Nash => "Nash",
            Strategic::QRE => "QRE",
            Strategic::PQCH => "PQCH",
        }
    }

    pub fn is_equilibrium(self) -> bool {
        matches!(self, Strategic::Nash | Strategic::QRE)
    }
}

/// A strategic component, an optional non-strategic component and the
/// behavioral parameters they use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub strategic: Strategic,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonstrategic: Option<Level0Spec>,
    /// QBR precision. Fixed (not fitted) for Nash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Non-strategic share, equilibrium models with a level-0 component only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Poisson mean, PQCH only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "default_max_level")]
    pub max_level: usize,
}

fn default_max_level() -> usize {
    MAX_LEVEL
}

impl ModelSpec {
    pub fn nash() -> Self {
        ModelSpec {
            strategic: Strategic::Nash,
            nonstrategic: None,
            lambda: Some(NASH_LAMBDA),
            beta: None,
            tau: None,
            max_level: MAX_LEVEL,
        }
    }

    pub fn qre(lambda: f64) -> Self {
        ModelSpec {
            strategic: Strategic::QRE,
            lambda: Some(lambda),
            ..ModelSpec::nash()
        }
    }

    pub fn qre_l0(lambda: f64, beta: f64, l0: Level0Spec) -> Self {
        ModelSpec {
            strategic: Strategic::QRE,
            nonstrategic: Some(l0),
            lambda: Some(lambda),
            beta: Some(beta),
            tau: None,
            max_level: MAX_LEVEL,
        }
    }

    pub fn pqch(lambda: f64, tau: f64, l0: Level0Spec) -> Self {
        ModelSpec {
            strategic: Strategic::PQCH,
            nonstrategic: Some(l0),
            lambda: Some(lambda),
            beta: None,
            tau: Some(tau),
            max_level: MAX_LEVEL,
        }
    }

    pub fn nonstrategic_only(l0: Level0Spec) -> Self {
        ModelSpec {
            strategic: Strategic::None,
            nonstrategic: Some(l0),
            lambda: None,
            beta: None,
            tau: None,
            max_level: MAX_LEVEL,
        }
    }

    /// Name in STRAT-NONSTRAT form, e.g. `QRE-QL4`; models without a
    /// non-strategic component are named by the strategic part alone.
    pub fn label(&self) -> String {
        match &self.nonstrategic {
            Some(l0) => format!("{}-{}", self.strategic.label(), l0.kind.label()),
            None => self.strategic.label().to_string(),
        }
    }

    pub fn nonstrategic_label(&self) -> &'static str {
        self.nonstrategic.map_or("none", |l0| l0.kind.label())
    }

    /// Effective QBR precision.
    pub fn lambda(&self) -> f64 {
        match self.strategic {
            Strategic::Nash => self.lambda.unwrap_or(NASH_LAMBDA),
            Strategic::None => 0.0,
            _ => self.lambda.unwrap_or(0.0),
        }
    }

    /// Effective non-strategic share of an equilibrium model.
    pub fn beta(&self) -> f64 {
        match (self.strategic, &self.nonstrategic) {
            (Strategic::None, _) => 1.0,
            (Strategic::Nash | Strategic::QRE, Some(_)) => self.beta.unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("{}: {msg}", self.label())));
        if let Some(l0) = &self.nonstrategic {
            l0.validate()?;
        }
        if self.tau.is_some() && self.strategic != Strategic::PQCH {
            return bad("tau is only used by PQCH");
        }
        if let Some(beta) = self.beta {
            if !self.strategic.is_equilibrium() {
                return bad("beta is only used by equilibrium models");
            }
            if self.nonstrategic.is_none() && beta != 0.0 {
                return bad("beta must be 0 without a non-strategic component");
            }
            if !(0.0..=1.0).contains(&beta) {
                return bad("beta must lie in [0, 1]");
            }
        }
        if let Some(lambda) = self.lambda {
            if !(lambda >= 0.0) || !lambda.is_finite() {
                return bad("lambda must be finite and nonnegative");
            }
        }
        match self.strategic {
            Strategic::None if self.nonstrategic.is_none() => bad("needs a non-strategic component"),
            Strategic::PQCH if self.nonstrategic.is_none() => bad("needs a level-0 component"),
            Strategic::PQCH if !(self.tau() >= 0.0) || !self.tau().is_finite() => {
                bad("tau must be finite and nonnegative")
            }
            Strategic::PQCH if self.max_level == 0 => bad("max_level must be positive"),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Canonical starting values used by named presets.
pub const PRESET_LAMBDA: f64 = 0.1;
pub const PRESET_BETA: f64 = 0.5;
pub const PRESET_TAU: f64 = 1.0;
pub const PRESET_LAMBDA0: f64 = 0.1;

impl FromStr for ModelSpec {
    type Err = Error;

    /// Parses names like `Nash`, `QRE`, `QRE-uniform`, `PQCH-QL4`, `None-DL4`.
    fn from_str(s: &str) -> Result<Self> {
        let (strat, nonstrat) = match s.split_once('-') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let strategic = match strat.to_ascii_lowercase().as_str() {
            "nash" => Strategic::Nash,
            "qre" => Strategic::QRE,
            "pqch" | "qch" => Strategic::PQCH,
            "none" => Strategic::None,
            _ => return Err(Error::InvalidSpec(format!("unknown strategic component in {s:?}"))),
        };
        let l0 = match nonstrat.map(str::to_ascii_lowercase).as_deref() {
            None | Some("none") => None,
            Some("uniform") | Some("unif") => Some(Level0Spec::uniform()),
            Some("ql4") => Some(Level0Spec::ql4(PRESET_LAMBDA0, Level0Weights::default())),
            Some("dl4") => Some(Level0Spec::dl4(Level0Weights::default())),
            Some("l4") => Some(Level0Spec::l4(Level0Weights::default())),
            Some(other) => return Err(Error::InvalidSpec(format!("unknown non-strategic component {other:?}"))),
        };
        let spec = match (strategic, l0) {
            (Strategic::Nash, None) => ModelSpec::nash(),
            (Strategic::Nash, Some(l0)) => ModelSpec {
                nonstrategic: Some(l0),
                beta: Some(PRESET_BETA),
                ..ModelSpec::nash()
            },
            (Strategic::QRE, None) => ModelSpec::qre(PRESET_LAMBDA),
            (Strategic::QRE, Some(l0)) => ModelSpec::qre_l0(PRESET_LAMBDA, PRESET_BETA, l0),
            (Strategic::PQCH, l0) => ModelSpec::pqch(PRESET_LAMBDA, PRESET_TAU, l0.unwrap_or_else(Level0Spec::uniform)),
            (Strategic::None, Some(l0)) => ModelSpec::nonstrategic_only(l0),
            (Strategic::None, None) => return Err(Error::InvalidSpec("model with no components".into())),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Leave-one-out distribution of the other participants' actions in `game`.
pub fn empirical_distribution(
    d: &PlayDataset,
    game: &str,
    participant: &str,
    n_actions: usize,
) -> Result<MixedStrategy> {
    let mut counts = vec![0usize; n_actions];
    let mut total = 0usize;
    for obs in d.observations() {
        if obs.game == game && obs.participant != participant {
            if obs.action >= n_actions {
                return Err(Error::DimensionMismatch {
                    expected: n_actions,
                    found: obs.action + 1,
                });
            }
            counts[obs.action] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::NoOtherObservations {
            game: game.to_string(),
            participant: participant.to_string(),
        });
    }
    Ok(MixedStrategy::from_normalized(
        counts.into_iter().map(|c| c as f64 / total as f64).collect(),
    ))
}

/// Predicted play of `player` under model `m`.
///
/// Equilibrium models respond to `empirical`, the observed play of the
/// opponent population; the hierarchy and purely non-strategic models ignore it.
pub fn model_predict(
    m: &ModelSpec,
    g: &PayoffGame,
    player: usize,
    empirical: Option<&MixedStrategy>,
) -> Result<MixedStrategy> {
    m.validate()?;
    match m.strategic {
        Strategic::None => {
            let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
            level0_predict(l0, g, player)
        }
        Strategic::Nash | Strategic::QRE => {
            let emp = empirical.ok_or(Error::MissingEmpirical)?;
            let response = qbr(g, player, emp, m.lambda())?;
            match &m.nonstrategic {
                Some(l0) => Ok(level0_predict(l0, g, player)?.mix(&response, m.beta())),
                None => Ok(response),
            }
        }
        Strategic::PQCH => {
            let l0 = m.nonstrategic.as_ref().ok_or_else(|| Error::InvalidSpec(m.label()))?;
            let levels = truncated_poisson(m.tau(), m.max_level)?;
            Ok(qch_predict(g, player, &levels, m.lambda(), l0)?.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::games::{make_payoff_game, random_payoff_game, Matrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_action_game() -> PayoffGame {
        // Row expected utilities against any opponent: action 0 -> 1, action 1 -> 0.
        let u1 = Matrix::from_rows(vec![vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        make_payoff_game("g", u1.clone(), u1.transpose(), true).unwrap()
    }

    #[test]
    fn qbr_examples() {
        let g = two_action_game();
        let p = qbr(&g, 0, &MixedStrategy::uniform(2), 0.0).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        let p = qbr(&g, 0, &MixedStrategy::uniform(2), 1.0).unwrap();
        assert!((p.prob(0) - 0.73106).abs() < 1e-5);
        assert!((p.prob(1) - 0.26894).abs() < 1e-5);
        let p = qbr(&g, 0, &MixedStrategy::uniform(2), 1000.0).unwrap();
        assert!(p.prob(0) >= 1.0 - 1e-6);
    }

    #[test]
    fn qbr_rejects_bad_dimension() {
        let g = two_action_game();
        assert!(matches!(
            qbr(&g, 0, &MixedStrategy::uniform(3), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn dataset(actions: &[(&str, usize)]) -> PlayDataset {
        PlayDataset::new(actions.iter().map(|(p, a)| Observation::new(*p, "g", *a)).collect()).unwrap()
    }

    #[test]
    fn empirical_counts_exclude_self() {
        let d = dataset(&[("me", 2), ("a", 0), ("b", 0), ("c", 1)]);
        let e = empirical_distribution(&d, "g", "me", 3).unwrap();
        assert_eq!(e.probs(), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);

        let d = dataset(&[("me", 1), ("a", 0), ("b", 0)]);
        let e = empirical_distribution(&d, "g", "me", 3).unwrap();
        assert_eq!(e.probs(), &[1.0, 0.0, 0.0]);

        let d = dataset(&[("me", 1)]);
        assert!(matches!(
            empirical_distribution(&d, "g", "me", 3),
            Err(Error::NoOtherObservations { .. })
        ));
    }

    #[test]
    fn mixture_degenerates_at_beta_extremes() {
        let g = random_payoff_game("g", &mut ChaCha8Rng::seed_from_u64(4), 3, 0.0, 100.0).unwrap();
        let emp = MixedStrategy::new(vec![0.5, 0.25, 0.25]).unwrap();
        let l0 = Level0Spec::ql4(0.3, Level0Weights::from_array([0.1, 0.2, 0.3, 0.2, 0.2]));

        let m = ModelSpec::qre_l0(0.2, 1.0, l0);
        let p = model_predict(&m, &g, 0, Some(&emp)).unwrap();
        assert!(p.max_abs_diff(&level0_predict(&l0, &g, 0).unwrap()) < 1e-15);

        let m = ModelSpec::qre_l0(0.2, 0.0, l0);
        let p = model_predict(&m, &g, 0, Some(&emp)).unwrap();
        assert!(p.max_abs_diff(&qbr(&g, 0, &emp, 0.2).unwrap()) < 1e-15);
    }

    #[test]
    fn nash_is_qre_at_fixed_precision() {
        let g = random_payoff_game("g", &mut ChaCha8Rng::seed_from_u64(4), 3, 0.0, 100.0).unwrap();
        let emp = MixedStrategy::new(vec![0.2, 0.3, 0.5]).unwrap();
        let nash = model_predict(&ModelSpec::nash(), &g, 0, Some(&emp)).unwrap();
        let qre = model_predict(&ModelSpec::qre(100.0), &g, 0, Some(&emp)).unwrap();
        assert_eq!(nash, qre);
    }

    #[test]
    fn equilibrium_models_need_empirical() {
        let g = two_action_game();
        assert!(matches!(
            model_predict(&ModelSpec::qre(1.0), &g, 0, None),
            Err(Error::MissingEmpirical)
        ));
    }

    #[test]
    fn preset_names_parse() {
        for (name, label) in [
            ("Nash", "Nash"),
            ("QRE", "QRE"),
            ("QRE-uniform", "QRE-uniform"),
            ("QRE-QL4", "QRE-QL4"),
            ("PQCH-uniform", "PQCH-uniform"),
            ("PQCH-QL4", "PQCH-QL4"),
            ("None-QL4", "None-QL4"),
            ("QRE-DL4", "QRE-DL4"),
            ("PQCH-L4", "PQCH-L4"),
        ] {
            let m: ModelSpec = name.parse().unwrap();
            assert_eq!(m.label(), label);
        }
        assert!("None".parse::<ModelSpec>().is_err());
        assert!("Foo-QL4".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn spec_json_shape() {
        let m: ModelSpec = "QRE-QL4".parse().unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["strategic"], "QRE");
        assert_eq!(v["nonstrategic"]["kind"], "QL4");
        assert!(v["nonstrategic"]["weights"]["w_fair"].is_number());
        assert!(v.get("tau").is_none());
        let back: ModelSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut m = ModelSpec::qre(1.0);
        m.tau = Some(1.0);
        assert!(m.validate().is_err());
        let mut m = ModelSpec::qre(1.0);
        m.beta = Some(0.5);
        assert!(m.validate().is_err());
        let mut m = ModelSpec::pqch(1.0, 1.0, Level0Spec::uniform());
        m.nonstrategic = None;
        assert!(m.validate().is_err());
    }
}
