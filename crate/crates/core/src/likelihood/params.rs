//! Mapping between model parameters and the unconstrained vector the
//! optimizer works on.
//!
//! Positive quantities (v, λ, τ, λ0) are log-transformed, β goes through
//! the logistic function and the five level-0 weights are a softmax over
//! four free logits with the uniform rule's logit pinned at 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Level0Kind, Level0Weights, ModelSpec, Strategic};
use crate::numeric::{logistic, logit};

pub const VALUE_BOUNDS: (f64, f64) = (1e-3, 1e4);
pub const LAMBDA_BOUNDS: (f64, f64) = (1e-6, 1e3);
pub const LAMBDA0_BOUNDS: (f64, f64) = (1e-6, 1e3);
pub const TAU_BOUNDS: (f64, f64) = (1e-6, 10.0);
/// Box on the logit of β and on the weight logits.
pub const LOGIT_BOUND: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamSlot {
    LogValue,
    LogLambda,
    LogitBeta,
    LogTau,
    LogLambda0,
    /// Logit of rule `0..4` (max, min, fair, eff) relative to the uniform rule.
    WeightLogit(usize),
}

impl ParamSlot {
    pub fn name(self) -> String {
        match self {
            ParamSlot::LogValue => "log_v".into(),
            ParamSlot::LogLambda => "log_lambda".into(),
            ParamSlot::LogitBeta => "logit_beta".into(),
            ParamSlot::LogTau => "log_tau".into(),
            ParamSlot::LogLambda0 => "log_lambda0".into(),
            ParamSlot::WeightLogit(i) => format!("weight_logit_{}", ["max", "min", "fair", "eff"][i]),
        }
    }

    /// Box in transformed space.
    pub fn bounds(self) -> (f64, f64) {
        let log = |(lo, hi): (f64, f64)| (f64::ln(lo), f64::ln(hi));
        match self {
            ParamSlot::LogValue => log(VALUE_BOUNDS),
            ParamSlot::LogLambda => log(LAMBDA_BOUNDS),
            ParamSlot::LogTau => log(TAU_BOUNDS),
            ParamSlot::LogLambda0 => log(LAMBDA0_BOUNDS),
            ParamSlot::LogitBeta | ParamSlot::WeightLogit(_) => (-LOGIT_BOUND, LOGIT_BOUND),
        }
    }
}

/// Transformed parameter vector laid out by a [`ParamSchema`].
pub type ParamVector = Vec<f64>;

/// A valuation together with a fully parameterized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub v: f64,
    pub model: ModelSpec,
}

/// Which parameters of a model are free, and in what order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSchema {
    template: ModelSpec,
    slots: Vec<ParamSlot>,
}

impl ParamSchema {
    /// Schema for `m`. Nash always keeps λ fixed; `pin_lambda` does the same
    /// for any other model.
    pub fn new(m: &ModelSpec, pin_lambda: bool) -> Result<Self> {
        m.validate()?;
        let mut slots = vec![ParamSlot::LogValue];
        match m.strategic {
            Strategic::QRE | Strategic::PQCH if !pin_lambda => slots.push(ParamSlot::LogLambda),
            _ => {}
        }
        if m.strategic.is_equilibrium() && m.nonstrategic.is_some() {
            slots.push(ParamSlot::LogitBeta);
        }
        if m.strategic == Strategic::PQCH {
            slots.push(ParamSlot::LogTau);
        }
        if let Some(l0) = &m.nonstrategic {
            if l0.kind == Level0Kind::QL4 {
                slots.push(ParamSlot::LogLambda0);
            }
            if l0.kind.has_weights() {
                slots.extend((0..4).map(ParamSlot::WeightLogit));
            }
        }
        let mut template = m.clone();
        if template.strategic.is_equilibrium() && template.lambda.is_none() {
            template.lambda = Some(template.lambda());
        }
        Ok(ParamSchema { template, slots })
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn template(&self) -> &ModelSpec {
        &self.template
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.slots.iter().map(|s| s.bounds()).unzip()
    }

    /// Transforms `(v, m)` into schema coordinates, clamped to the box.
    pub fn pack(&self, v: f64, m: &ModelSpec) -> Result<ParamVector> {
        if m.strategic != self.template.strategic
            || m.nonstrategic.map(|l| l.kind) != self.template.nonstrategic.map(|l| l.kind)
        {
            return Err(Error::InvalidSpec(format!(
                "cannot pack {} with a {} schema",
                m.label(),
                self.template.label()
            )));
        }
        let weights = m.nonstrategic.map(|l| l.weights.as_array());
        let x = self
            .slots
            .iter()
            .map(|slot| {
                let raw = match slot {
                    ParamSlot::LogValue => v.ln(),
                    ParamSlot::LogLambda => m.lambda().ln(),
                    ParamSlot::LogitBeta => logit(m.beta()),
                    ParamSlot::LogTau => m.tau().ln(),
                    ParamSlot::LogLambda0 => m.nonstrategic.map_or(1.0, |l| l.lambda0).ln(),
                    ParamSlot::WeightLogit(i) => {
                        let w = weights.unwrap_or([0.2; 5]);
                        (w[*i] / w[4]).ln()
                    }
                };
                let (lo, hi) = slot.bounds();
                if raw.is_nan() {
                    lo
                } else {
                    raw.clamp(lo, hi)
                }
            })
            .collect();
        Ok(x)
    }

    /// Inverse of [`ParamSchema::pack`] (no clamping).
    pub fn unpack(&self, x: &[f64]) -> Result<FittedParams> {
        if x.len() != self.slots.len() {
            return Err(Error::SchemaMismatch {
                expected: self.slots.len(),
                found: x.len(),
            });
        }
        let mut model = self.template.clone();
        let mut v = f64::NAN;
        let mut logits = [0.0; 5];
        let mut has_weights = false;
        for (slot, &xi) in self.slots.iter().zip(x) {
            match slot {
                ParamSlot::LogValue => v = xi.exp(),
                ParamSlot::LogLambda => model.lambda = Some(xi.exp()),
                ParamSlot::LogitBeta => model.beta = Some(logistic(xi)),
                ParamSlot::LogTau => model.tau = Some(xi.exp()),
                ParamSlot::LogLambda0 => {
                    if let Some(l0) = model.nonstrategic.as_mut() {
                        l0.lambda0 = xi.exp();
                    }
                }
                ParamSlot::WeightLogit(i) => {
                    logits[*i] = xi;
                    has_weights = true;
                }
            }
        }
        if has_weights {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps = logits.map(|l| (l - max).exp());
            let total: f64 = exps.iter().sum();
            if let Some(l0) = model.nonstrategic.as_mut() {
                l0.weights = Level0Weights::from_array(exps.map(|e| e / total));
            }
        }
        Ok(FittedParams { v, model })
    }
}

/// Transformed vector for `(v, m)` under the default schema of `m`.
pub fn pack_params(m: &ModelSpec, v: f64) -> Result<ParamVector> {
    ParamSchema::new(m, false)?.pack(v, m)
}

/// Parameters encoded by `x` under the default schema of `m`.
pub fn unpack_params(m: &ModelSpec, x: &[f64]) -> Result<FittedParams> {
    ParamSchema::new(m, false)?.unpack(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Level0Spec;

    #[test]
    fn schema_layouts() {
        let slots = |name: &str| ParamSchema::new(&name.parse().unwrap(), false).unwrap().len();
        assert_eq!(slots("Nash"), 1);
        assert_eq!(slots("QRE"), 2);
        assert_eq!(slots("QRE-uniform"), 3);
        assert_eq!(slots("QRE-QL4"), 8);
        assert_eq!(slots("QRE-DL4"), 7);
        assert_eq!(slots("PQCH-uniform"), 3);
        assert_eq!(slots("PQCH-QL4"), 8);
        assert_eq!(slots("None-QL4"), 6);
        let pinned = ParamSchema::new(&"QRE".parse().unwrap(), true).unwrap();
        assert_eq!(pinned.slots(), &[ParamSlot::LogValue]);
    }

    #[test]
    fn zero_logits_give_equal_weights() {
        let m: ModelSpec = "QRE-QL4".parse().unwrap();
        let p = unpack_params(&m, &[0.0; 8]).unwrap();
        let w = p.model.nonstrategic.unwrap().weights.as_array();
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(p.model.beta, Some(0.5));
        assert_eq!(p.v, 1.0);
    }

    #[test]
    fn pack_unpack_identity() {
        let m: ModelSpec = "PQCH-QL4".parse().unwrap();
        let x = vec![2.3, -1.2, 0.4, -0.7, 1.1, -2.0, 0.5, 3.0];
        let p = unpack_params(&m, &x).unwrap();
        let back = pack_params(&p.model, p.v).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_length_is_schema_mismatch() {
        let m: ModelSpec = "QRE".parse().unwrap();
        assert!(matches!(
            unpack_params(&m, &[0.0; 3]),
            Err(Error::SchemaMismatch { expected: 2, found: 3 })
        ));
        let other = ModelSpec::qre_l0(0.1, 0.5, Level0Spec::uniform());
        assert!(ParamSchema::new(&m, false).unwrap().pack(1.0, &other).is_err());
    }

    #[test]
    fn pack_clamps_to_box() {
        let m = ModelSpec::qre(0.0);
        let x = pack_params(&m, 1e9).unwrap();
        assert_eq!(x[0], VALUE_BOUNDS.1.ln());
        assert_eq!(x[1], LAMBDA_BOUNDS.0.ln());
    }
}
