//! Joint maximum-likelihood estimation of the valuation and the behavioral
//! parameters, the fixed-λ Nash approximation and the λ sweep used to
//! validate it.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::AllocationGame;
use crate::likelihood::{FittedParams, Panel, ParamSchema, ParamSlot, PlayDataset, PqchForm};
use crate::models::{
    Level0Weights, ModelSpec, Strategic, NASH_LAMBDA, PRESET_BETA, PRESET_LAMBDA, PRESET_LAMBDA0, PRESET_TAU,
};
use crate::numeric::{derive_seed, median};
use crate::optimize::{minimize, Bounds, MinimizeOptions};

pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Random starts in addition to the canonical one.
    pub restarts: usize,
    pub pqch_form: PqchForm,
    /// Keep λ at the model's value instead of fitting it.
    pub pin_lambda: bool,
    pub minimize: MinimizeOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: DEFAULT_RESTARTS,
            pqch_form: PqchForm::default(),
            pin_lambda: false,
            minimize: MinimizeOptions::default(),
        }
    }
}

impl FitOptions {
    pub fn with_restarts(restarts: usize) -> Self {
        FitOptions {
            restarts,
            ..FitOptions::default()
        }
    }
}

/// Outcome of one start of the optimizer. Index 0 is the canonical start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub index: usize,
    pub start: Vec<f64>,
    pub x: Vec<f64>,
    pub loglik: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: String,
    pub v_hat: f64,
    pub theta_hat: ModelSpec,
    pub loglik: f64,
    pub n_observations: usize,
    pub n_restarts_used: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub pqch_form: PqchForm,
    pub restarts: Vec<RestartOutcome>,
}

impl EstimationResult {
    pub fn params(&self) -> FittedParams {
        FittedParams {
            v: self.v_hat,
            model: self.theta_hat.clone(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(
            path,
        )?))?)
    }
}

/// Ratio of the typical payment to the typical allocation; a unit-consistent
/// first guess for v. Falls back to 1 when it is not positive and finite.
pub fn payoff_scale(games: &[AllocationGame]) -> f64 {
    let mut xs = Vec::new();
    let mut ps = Vec::new();
    for g in games {
        for m in [g.x1(), g.x2()] {
            xs.extend_from_slice(m.values());
        }
        for m in [g.p1(), g.p2()] {
            ps.extend(m.values().iter().map(|p| p.abs()));
        }
    }
    if xs.is_empty() {
        return 1.0;
    }
    let v = median(&ps) / median(&xs);
    if v.is_finite() && v > 0.0 {
        v
    } else {
        1.0
    }
}

/// The canonical start: preset behavioral parameters with equal level-0 weights.
fn canonical_model(m: &ModelSpec, pin_lambda: bool) -> ModelSpec {
    let mut c = m.clone();
    if c.strategic != Strategic::Nash && c.strategic != Strategic::None && !pin_lambda {
        c.lambda = Some(PRESET_LAMBDA);
    }
    if c.strategic.is_equilibrium() && c.nonstrategic.is_some() {
        c.beta = Some(PRESET_BETA);
    }
    if c.strategic == Strategic::PQCH {
        c.tau = Some(PRESET_TAU);
    }
    if let Some(l0) = c.nonstrategic.as_mut() {
        if l0.kind == crate::models::Level0Kind::QL4 {
            l0.lambda0 = PRESET_LAMBDA0;
        }
        if l0.kind.has_weights() {
            l0.weights = Level0Weights::default();
        }
    }
    c
}

/// Box from which random starts are drawn; narrower than the feasible box.
fn start_range(slot: ParamSlot, log_v0: f64) -> (f64, f64) {
    match slot {
        ParamSlot::LogValue => (log_v0 - 4f64.ln(), log_v0 + 4f64.ln()),
        ParamSlot::LogLambda | ParamSlot::LogLambda0 => (1e-3f64.ln(), 10f64.ln()),
        ParamSlot::LogitBeta => (-3.0, 3.0),
        ParamSlot::LogTau => (0.1f64.ln(), 5f64.ln()),
        ParamSlot::WeightLogit(_) => (-2.0, 2.0),
    }
}

/// Maximizes the likelihood of `d` under `m` with default options.
pub fn maximize_likelihood<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    m: &ModelSpec,
    restarts: usize,
    rng: &mut R,
) -> Result<EstimationResult> {
    maximize_likelihood_with(d, games, m, &FitOptions::with_restarts(restarts), rng)
}

pub fn maximize_likelihood_with<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    m: &ModelSpec,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<EstimationResult> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let panel = Panel::new(d, games)?;
    fit_panel(&panel, m, opts, rng.random())
}

/// Fits `m` to an already compiled panel; restart seeds derive from `seed`.
pub fn fit_panel(panel: &Panel, m: &ModelSpec, opts: &FitOptions, seed: u64) -> Result<EstimationResult> {
    m.validate()?;
    let pin = opts.pin_lambda || m.strategic == Strategic::Nash;
    let schema = ParamSchema::new(m, pin)?;
    let (lo, hi) = schema.bounds();
    let bounds = Bounds::new(lo, hi)?;
    let v0 = payoff_scale(panel.games());
    let canonical = schema.pack(v0, &canonical_model(m, opts.pin_lambda))?;

    let mut starts = vec![canonical];
    for i in 1..=opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "restart", i as u64));
        let x: Vec<f64> = schema
            .slots()
            .iter()
            .map(|&slot| {
                let (a, b) = start_range(slot, v0.ln());
                let (lo, hi) = slot.bounds();
                (a + (b - a) * rng.random::<f64>()).clamp(lo, hi)
            })
            .collect();
        starts.push(x);
    }

    let form = opts.pqch_form;
    let objective = |x: &[f64]| -> f64 {
        match schema.unpack(x).and_then(|p| panel.loglik(&p.model, p.v, form)) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };

    let outcomes: Vec<RestartOutcome> = starts
        .into_par_iter()
        .enumerate()
        .map(
            |(index, start)| match minimize(&objective, &start, &bounds, &opts.minimize) {
                Ok(min) => RestartOutcome {
                    index,
                    start,
                    x: min.x,
                    loglik: -min.f,
                    grad_norm: min.grad_norm,
                    iterations: min.iterations,
                    converged: min.converged,
                    error: None,
                },
                Err(e) => RestartOutcome {
                    index,
                    start,
                    x: Vec::new(),
                    loglik: f64::NEG_INFINITY,
                    grad_norm: f64::INFINITY,
                    iterations: 0,
                    converged: false,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();

    let best = outcomes
        .iter()
        .filter(|o| o.error.is_none() && o.loglik.is_finite())
        .fold(None::<&RestartOutcome>, |best, o| match best {
            Some(b) if b.loglik >= o.loglik => Some(b),
            _ => Some(o),
        })
        .ok_or(Error::AllRestartsFailed)?;
    let params = schema.unpack(&best.x)?;
    // Report the likelihood recomputed at the returned parameters.
    let loglik = panel.loglik(&params.model, params.v, form)?;
    Ok(EstimationResult {
        model: m.label(),
        v_hat: params.v,
        theta_hat: params.model,
        loglik,
        n_observations: panel.n_observations(),
        n_restarts_used: outcomes.len(),
        converged: best.converged,
        grad_norm: best.grad_norm,
        pqch_form: form,
        restarts: outcomes.clone(),
    })
}

/// Nash model fit: QBR with λ held at `lambda_fixed`, optimized over v only.
pub fn estimate_nash<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    lambda_fixed: f64,
    restarts: usize,
    rng: &mut R,
) -> Result<EstimationResult> {
    if !(lambda_fixed > 0.0) || !lambda_fixed.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be positive, got {lambda_fixed}"
        )));
    }
    let m = ModelSpec {
        lambda: Some(lambda_fixed),
        ..ModelSpec::nash()
    };
    maximize_likelihood(d, games, &m, restarts, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub v_hat: f64,
    pub loglik: f64,
}

/// Nash fits over a grid of fixed λ values (positive, ascending).
pub fn lambda_sweep<R: Rng + ?Sized>(
    d: &PlayDataset,
    games: &[AllocationGame],
    lambdas: &[f64],
    restarts: usize,
    rng: &mut R,
) -> Result<Vec<SweepRow>> {
    if lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidConfig("sweep lambdas must be positive".into()));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("sweep lambdas must be sorted".into()));
    }
    if lambdas.is_empty() {
        return Ok(Vec::new());
    }
    let panel = Panel::new(d, games)?;
    let seed: u64 = rng.random();
    lambdas
        .iter()
        .map(|&lambda| {
            let m = ModelSpec {
                lambda: Some(lambda),
                ..ModelSpec::nash()
            };
            let r = fit_panel(&panel, &m, &FitOptions::with_restarts(restarts), seed)?;
            Ok(SweepRow {
                lambda,
                v_hat: r.v_hat,
                loglik: r.loglik,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["lambda", "v_hat", "loglik"]).map_err(io)?;
    for r in rows {
        w.write_record([r.lambda.to_string(), r.v_hat.to_string(), r.loglik.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Default λ grid for the Nash sweep.
pub fn default_sweep_grid() -> Vec<f64> {
    vec![1.0, 10.0, 50.0, NASH_LAMBDA, 200.0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::games::{allocation_from_payoff, random_payoff_game};
    use crate::models::Level0Spec;

    fn games(n: usize, v_star: f64, seed: u64) -> Vec<AllocationGame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let g = random_payoff_game(format!("g{i}"), &mut rng, 3, 0.0, 100.0).unwrap();
                allocation_from_payoff(&g, v_star, &mut rng, false).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_observation_flat_objective() {
        let gs = games(1, 10.0, 3);
        let d = PlayDataset::new(vec![Observation::new("p", "g0", 2)]).unwrap();
        let m = ModelSpec::nonstrategic_only(Level0Spec::uniform());
        let r = maximize_likelihood(&d, &gs, &m, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((r.loglik - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(r.converged);
        assert_eq!(r.restarts[0].iterations, 0);
        assert_eq!(r.n_restarts_used, 4);
    }

    #[test]
    fn empty_dataset_rejected() {
        let gs = games(1, 10.0, 3);
        let d = PlayDataset::new(Vec::new()).unwrap();
        let err = maximize_likelihood(&d, &gs, &ModelSpec::nash(), 1, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::EmptyDataset)));
    }

    #[test]
    fn canonical_start_uses_presets() {
        let m = ModelSpec::pqch(3.0, 0.2, Level0Spec::ql4(5.0, Level0Weights::uniform_only()));
        let c = canonical_model(&m, false);
        assert_eq!(c.lambda, Some(PRESET_LAMBDA));
        assert_eq!(c.tau, Some(PRESET_TAU));
        let l0 = c.nonstrategic.unwrap();
        assert_eq!(l0.lambda0, PRESET_LAMBDA0);
        assert_eq!(l0.weights, Level0Weights::default());
        assert_eq!(canonical_model(&ModelSpec::qre(7.0), true).lambda, Some(7.0));
    }

    #[test]
    fn payoff_scale_is_positive() {
        let gs = games(5, 20.0, 9);
        let v = payoff_scale(&gs);
        assert!(v > 1.0 && v < 100.0, "{v}");
    }

    #[test]
    fn sweep_validates_grid() {
        let gs = games(1, 10.0, 3);
        let d = PlayDataset::new(vec![Observation::new("p", "g0", 2), Observation::new("q", "g0", 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(lambda_sweep(&d, &gs, &[], 1, &mut rng).unwrap().is_empty());
        assert!(lambda_sweep(&d, &gs, &[10.0, 1.0], 1, &mut rng).is_err());
        assert!(lambda_sweep(&d, &gs, &[-1.0], 1, &mut rng).is_err());
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        write_sweep_csv(
            &[SweepRow {
                lambda: 100.0,
                v_hat: 9.5,
                loglik: -3.25,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "lambda,v_hat,loglik\n100,9.5,-3.25\n");
    }
}
