//! Non-strategic (level-0) behavior: uniform randomization, linear4 (L4),
//! its differentiable variant (DL4) and quantal linear4 (QL4).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{MixedStrategy, PayoffGame};
use crate::numeric::{argmax_uniform, softmax_scaled};

/// Ties between rule optima closer than this split the rule's mass evenly.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level0Kind {
    Uniform,
    L4,
    DL4,
    QL4,
}

impl Level0Kind {
    pub fn label(self) -> &'static str {
        match self {
            Level0Kind::Uniform => "uniform",
            Level0Kind::L4 => "L4",
            Level0Kind::DL4 => "DL4",
            Level0Kind::QL4 => "QL4",
        }
    }

    /// Whether the kind carries rule weights.
    pub fn has_weights(self) -> bool {
        !matches!(self, Level0Kind::Uniform)
    }
}

/// Mixture weights over the five decision rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level0Weights {
    pub w_max: f64,
    pub w_min: f64,
    pub w_fair: f64,
    pub w_eff: f64,
    pub w_unif: f64,
}

impl Default for Level0Weights {
    fn default() -> Self {
        Level0Weights::from_array([0.2; 5])
    }
}

impl Level0Weights {
    pub const SUM_TOL: f64 = 1e-9;

    /// Order: max, min, fair, eff, unif.
    pub fn from_array(w: [f64; 5]) -> Self {
        Level0Weights {
            w_max: w[0],
            w_min: w[1],
            w_fair: w[2],
            w_eff: w[3],
            w_unif: w[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.w_max, self.w_min, self.w_fair, self.w_eff, self.w_unif]
    }

    pub fn uniform_only() -> Self {
        Level0Weights::from_array([0.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
            return Err(Error::InvalidWeights(format!("weights outside [0, 1]: {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level0Spec {
    pub kind: Level0Kind,
    #[serde(default = "one")]
    pub lambda0: f64,
    #[serde(default)]
    pub weights: Level0Weights,
}

fn one() -> f64 {
    1.0
}

impl Level0Spec {
    pub fn uniform() -> Self {
        Level0Spec {
            kind: Level0Kind::Uniform,
            lambda0: 1.0,
            weights: Level0Weights::uniform_only(),
        }
    }

    pub fn ql4(lambda0: f64, weights: Level0Weights) -> Self {
        Level0Spec {
            kind: Level0Kind::QL4,
            lambda0,
            weights,
        }
    }

    pub fn dl4(weights: Level0Weights) -> Self {
        Level0Spec {
            kind: Level0Kind::DL4,
            lambda0: 1.0,
            weights,
        }
    }

    pub fn l4(weights: Level0Weights) -> Self {
        Level0Spec {
            kind: Level0Kind::L4,
            lambda0: 1.0,
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.has_weights() {
            self.weights.validate()?;
        }
        match self.kind {
            Level0Kind::QL4 if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() => Err(Error::InvalidSpec(format!(
                "QL4 precision must be positive, got {}",
                self.lambda0
            ))),
            Level0Kind::DL4 if self.lambda0 != 1.0 => Err(Error::InvalidSpec(format!(
                "DL4 precision is fixed at 1, got {}",
                self.lambda0
            ))),
            _ => Ok(()),
        }
    }
}

/// Per-action criterion values used by the linear4 rules.
#[derive(Debug, Clone, PartialEq)]
pub struct Ql4Features {
    /// Best own utility reachable with the action.
    pub max: Vec<f64>,
    /// Worst own utility reachable with the action.
    pub min: Vec<f64>,
    /// Smallest attainable unfairness, `max_b -|u_own - u_opp|`; never positive.
    pub fair: Vec<f64>,
    /// Largest attainable utility sum.
    pub eff: Vec<f64>,
}

impl Ql4Features {
    fn rules(&self) -> [&[f64]; 4] {
        [&self.max, &self.min, &self.fair, &self.eff]
    }
}

pub fn ql4_features(g: &PayoffGame, player: usize) -> Ql4Features {
    let n = g.n_actions();
    let mut f = Ql4Features {
        max: vec![f64::NEG_INFINITY; n],
        min: vec![f64::INFINITY; n],
        fair: vec![f64::NEG_INFINITY; n],
        eff: vec![f64::NEG_INFINITY; n],
    };
    for a in 0..n {
        for b in 0..n {
            let own = g.utility(player, a, b);
            let other = g.opponent_utility(player, a, b);
            f.max[a] = f.max[a].max(own);
            f.min[a] = f.min[a].min(own);
            f.fair[a] = f.fair[a].max(-(own - other).abs());
            f.eff[a] = f.eff[a].max(own + other);
        }
    }
    f
}

/// Per-rule distributions in rule order max, min, fair, eff (without the uniform rule).
pub fn rule_distributions(spec: &Level0Spec, g: &PayoffGame, player: usize) -> [Vec<f64>; 4] {
    let features = ql4_features(g, player);
    features.rules().map(|values| match spec.kind {
        Level0Kind::L4 => argmax_uniform(values, TIE_TOL),
        _ => softmax_scaled(values, spec.lambda0),
    })
}

pub(crate) fn level0_probs(spec: &Level0Spec, g: &PayoffGame, player: usize) -> Vec<f64> {
    let n = g.n_actions();
    if spec.kind == Level0Kind::Uniform {
        return vec![1.0 / n as f64; n];
    }
    let w = spec.weights.as_array();
    let rules = rule_distributions(spec, g, player);
    let mut out = vec![w[4] / n as f64; n];
    for (weight, dist) in w.iter().zip(&rules) {
        if *weight == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(dist) {
            *o += weight * p;
        }
    }
    out
}

/// Level-0 prediction for `player` in `g`.
pub fn level0_predict(spec: &Level0Spec, g: &PayoffGame, player: usize) -> Result<MixedStrategy> {
    spec.validate()?;
    Ok(MixedStrategy::from_normalized(level0_probs(spec, g, player)))
}
