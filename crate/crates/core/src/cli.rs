//! Command-line pipeline: game generation, scenarios, simulation,
//! estimation, evaluation and report tables.
//!
//! Every knob can come from a JSON config file (`--config`) or a flag; a flag
//! wins over the config file, which wins over the `BEHEST_SEED` environment
//! variable (seed only), which wins over the built-in default. All randomness
//! derives from the one seed through [`derive_seed`] with the command name
//! and a task index.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PlayDataset;
use crate::error::{Error, Result};
use crate::estimation::{fit_panel, lambda_sweep, write_sweep_csv, EstimationResult, FitOptions};
use crate::evaluation::{
    bootstrap_threshold, cross_validate, make_scenarios_with, mark_best, relative_error, t_confidence_interval,
    welfare_prediction, EvalRecord, EvalReport, ModelEstimator, Scenario, TInterval, ValueEstimator, WelfareSplit,
};
use crate::games::{random_payoff_game, PayoffGame};
use crate::likelihood::{Panel, PqchForm};
use crate::models::ModelSpec;
use crate::numeric::derive_seed;
use crate::simulate::{
    allocation_games, simulate_dataset, LevelSampling, Pairing, SimulationConfig, SimulationSidecar,
};

pub const SEED_ENV: &str = "BEHEST_SEED";
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_V_STARS: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];
pub const DEFAULT_MODELS: [&str; 7] = [
    "Nash",
    "QRE",
    "QRE-uniform",
    "QRE-QL4",
    "PQCH-uniform",
    "PQCH-QL4",
    "None-QL4",
];

/// A model given by preset name (`QRE-QL4`) or as a full JSON spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelArg {
    Name(String),
    Spec(ModelSpec),
}

impl ModelArg {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelArg::Name(name) => name.parse(),
            ModelArg::Spec(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

fn parse_model_arg(s: &str) -> std::result::Result<ModelArg, String> {
    let arg = if s.trim_start().starts_with('{') {
        ModelArg::Spec(serde_json::from_str(s).map_err(|e| e.to_string())?)
    } else {
        ModelArg::Name(s.to_string())
    };
    arg.spec().map_err(|e| e.to_string())?;
    Ok(arg)
}

/// Every configurable knob. All fields are optional so that a config file
/// and command-line flags can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed for all randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Payoff game JSON file or directory.
    #[arg(long)]
    pub games: Option<PathBuf>,
    /// Scenario JSON file or directory (searched recursively).
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of results for `report`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Models to fit, comma separated (e.g. `QRE-QL4,PQCH-uniform`).
    #[arg(long, value_delimiter = ',', value_parser = parse_model_arg)]
    pub models: Option<Vec<ModelArg>>,
    /// Generating model for `simulate`.
    #[arg(long, value_parser = parse_model_arg)]
    pub generator: Option<ModelArg>,
    #[arg(long, value_delimiter = ',')]
    pub v_stars: Option<Vec<f64>>,
    /// Endowed value used by `simulate`.
    #[arg(long)]
    pub v_star: Option<f64>,
    /// Scenarios per endowed value.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n_games: Option<usize>,
    #[arg(long)]
    pub n_actions: Option<usize>,
    #[arg(long)]
    pub n_participants: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Bootstrap resamples.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Relative-error threshold of the bootstrap analysis.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Confidence level of t-intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub pqch_form: Option<PqchFormArg>,
    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,
    #[arg(long, value_enum)]
    pub level_sampling: Option<LevelSamplingArg>,
    #[arg(long)]
    pub zero_payment: Option<bool>,
    /// Training games of the welfare split, comma separated (default: seeded random half).
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PqchFormArg {
    PerObservation,
    StableLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PairingArg {
    PreviousParticipant,
    EmpiricalPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LevelSamplingArg {
    Stable,
    PerGame,
}

macro_rules! layer {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        RunConfig { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl RunConfig {
    /// `self` (flags) over `file` (config file).
    pub fn over(self, file: RunConfig) -> RunConfig {
        layer!(
            self,
            file,
            seed,
            games,
            scenarios,
            dataset,
            out,
            results,
            models,
            generator,
            v_stars,
            v_star,
            k,
            n_games,
            n_actions,
            n_participants,
            folds,
            rounds,
            bootstrap,
            alpha,
            level,
            restarts,
            lambdas,
            pqch_form,
            pairing,
            level_sampling,
            zero_payment,
            split
        )
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Seed from the config, else `BEHEST_SEED`, else the default.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} is not an unsigned integer: {v:?}"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig(format!("missing required setting `{name}`")))
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = Self::require(&self.out, "out")?.clone();
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        match &self.models {
            Some(list) => list.iter().map(ModelArg::spec).collect(),
            None => DEFAULT_MODELS.iter().map(|m| m.parse()).collect(),
        }
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let mut opts = FitOptions::with_restarts(self.restarts.unwrap_or(crate::estimation::DEFAULT_RESTARTS));
        opts.pqch_form = match self.pqch_form {
            Some(PqchFormArg::StableLevel) => PqchForm::StableLevel,
            _ => PqchForm::PerObservation,
        };
        Ok(opts)
    }

    fn level(&self) -> Result<f64> {
        let level = self.level.unwrap_or(0.95);
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must be in (0, 1), got {level}")));
        }
        Ok(level)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "behest",
    version,
    about = "Estimate valuations from initial play in allocation games"
)]
pub struct Cli {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write random symmetric payoff games.
    GenGames(RunConfig),
    /// Map payoff games to allocation games for each endowed value.
    GenScenarios(RunConfig),
    /// Simulate a panel dataset from a generating model.
    Simulate(RunConfig),
    /// Fit models to a dataset under each scenario.
    Estimate(RunConfig),
    /// Nash fits over a grid of fixed precisions.
    NashSweep(RunConfig),
    /// Participant-level cross-validation.
    Crossval(RunConfig),
    /// Bootstrap fraction of scenarios below a relative-error threshold.
    Bootstrap(RunConfig),
    /// Held-out welfare prediction error.
    Welfare(RunConfig),
    /// Assemble report tables from result directories.
    Report(RunConfig),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenGames(_) => "gen-games",
            Command::GenScenarios(_) => "gen-scenarios",
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::NashSweep(_) => "nash-sweep",
            Command::Crossval(_) => "crossval",
            Command::Bootstrap(_) => "bootstrap",
            Command::Welfare(_) => "welfare",
            Command::Report(_) => "report",
        }
    }

    fn flags(&self) -> &RunConfig {
        match self {
            Command::GenGames(c)
            | Command::GenScenarios(c)
            | Command::Simulate(c)
            | Command::Estimate(c)
            | Command::NashSweep(c)
            | Command::Crossval(c)
            | Command::Bootstrap(c)
            | Command::Welfare(c)
            | Command::Report(c) => c,
        }
    }
}

/// What a successful command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// Fits whose optimizer stopped short of the gradient tolerance.
    pub unconverged: usize,
}

/// Process exit code for a command result: 0 success, 2 invalid input,
/// 3 results written but some fits unconverged, 1 anything else.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.unconverged > 0 => 3,
        Ok(_) => 0,
        Err(e) if is_validation(e) => 2,
        Err(_) => 1,
    }
}

pub fn is_validation(e: &Error) -> bool {
    !matches!(e, Error::Io(_) | Error::NoConvergence { .. } | Error::AllRestartsFailed)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = cli.command.flags().clone().over(file);
    let seed = cfg.resolved_seed()?;
    let task = || match &cli.command {
        Command::GenGames(_) => cmd_gen_games(&cfg, seed),
        Command::GenScenarios(_) => cmd_gen_scenarios(&cfg, seed),
        Command::Simulate(_) => cmd_simulate(&cfg, seed),
        Command::Estimate(_) => cmd_estimate(&cfg, seed),
        Command::NashSweep(_) => cmd_nash_sweep(&cfg, seed),
        Command::Crossval(_) => cmd_crossval(&cfg, seed),
        Command::Bootstrap(_) => cmd_bootstrap(&cfg, seed),
        Command::Welfare(_) => cmd_welfare(&cfg, seed),
        Command::Report(_) => cmd_report(&cfg),
    };
    match cli.jobs {
        Some(0) => Err(Error::InvalidConfig("--jobs must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(task),
        None => task(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, out: &mut Outcome) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    out.written.push(path.to_path_buf());
    Ok(())
}

fn csv_writer(path: &Path, header: &[&str], out: &mut Outcome) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    out.written.push(path.to_path_buf());
    Ok(w)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// JSON files under `path` (or `path` itself), sorted by path.
fn json_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::InvalidConfig(format!("{} does not exist", path.display())));
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json") {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Payoff games from a JSON file (one game or an array) or a directory of them.
pub fn load_games(path: &Path) -> Result<Vec<PayoffGame>> {
    let mut games = Vec::new();
    for file in json_files(path)? {
        let text = fs::read_to_string(&file)?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", file.display())))?;
        let parse = |v: serde_json::Value| {
            serde_json::from_value::<PayoffGame>(v)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", file.display())))
        };
        match value {
            serde_json::Value::Array(items) => {
                for item in items {
                    games.push(parse(item)?);
                }
            }
            other => games.push(parse(other)?),
        }
    }
    if games.is_empty() {
        return Err(Error::InvalidConfig(format!("no games found in {}", path.display())));
    }
    Ok(games)
}

/// Scenarios from a JSON file or a directory tree, ordered by (v*, index).
pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let mut scenarios = Vec::new();
    for file in json_files(path)? {
        let text = fs::read_to_string(&file)?;
        let s: Scenario =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", file.display())))?;
        scenarios.push(s);
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no scenarios found in {}",
            path.display()
        )));
    }
    scenarios.sort_by(|a, b| a.v_star.total_cmp(&b.v_star).then(a.index.cmp(&b.index)));
    Ok(scenarios)
}

fn load_dataset(cfg: &RunConfig) -> Result<PlayDataset> {
    PlayDataset::read_csv(RunConfig::require(&cfg.dataset, "dataset")?)
}

/// Scenarios grouped by endowed value, ascending.
fn by_value(scenarios: &[Scenario]) -> Vec<(f64, Vec<&Scenario>)> {
    let mut groups: Vec<(f64, Vec<&Scenario>)> = Vec::new();
    for s in scenarios {
        match groups.last_mut() {
            Some((v, list)) if *v == s.v_star => list.push(s),
            _ => groups.push((s.v_star, vec![s])),
        }
    }
    groups
}

fn interval(samples: &[f64], level: f64) -> Result<Option<TInterval>> {
    if samples.len() < 2 {
        return Ok(None);
    }
    t_confidence_interval(samples, level).map(Some)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn file_label(model: &ModelSpec) -> String {
    model.label()
}

pub fn cmd_gen_games(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let n = cfg.n_games.unwrap_or(24);
    let n_actions = cfg.n_actions.unwrap_or(3);
    if n == 0 {
        return Err(Error::InvalidConfig("n_games must be at least 1".into()));
    }
    let dir = cfg.out_dir()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gen-games", 0));
    let width = n.to_string().len().max(2);
    let mut out = Outcome::default();
    for i in 0..n {
        let id = format!("g{:0width$}", i + 1);
        let g = random_payoff_game(id.clone(), &mut rng, n_actions, 0.0, 100.0)?;
        write_json(&dir.join(format!("{id}.json")), &g, &mut out)?;
    }
    Ok(out)
}

pub fn cmd_gen_scenarios(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let games = load_games(RunConfig::require(&cfg.games, "games")?)?;
    let v_stars = cfg.v_stars.clone().unwrap_or(DEFAULT_V_STARS.to_vec());
    let k = cfg.k.unwrap_or(25);
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();
    for (vi, &v) in v_stars.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gen-scenarios", vi as u64));
        let scenarios = make_scenarios_with(&games, v, k, cfg.zero_payment.unwrap_or(false), &mut rng)?;
        let vdir = dir.join(format!("v{v}"));
        fs::create_dir_all(&vdir)?;
        for s in &scenarios {
            write_json(&vdir.join(format!("scenario_{:03}.json", s.index)), s, &mut out)?;
        }
    }
    Ok(out)
}

pub fn cmd_simulate(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let games = load_games(RunConfig::require(&cfg.games, "games")?)?;
    let model = RunConfig::require(&cfg.generator, "generator")?.spec()?;
    let sim = SimulationConfig {
        model,
        v_star: cfg.v_star.unwrap_or(20.0),
        n_participants: cfg.n_participants.unwrap_or(200),
        games,
        pairing: match cfg.pairing {
            Some(PairingArg::EmpiricalPool) => Pairing::EmpiricalPool,
            _ => Pairing::PreviousParticipant,
        },
        seed: derive_seed(seed, "simulate", 0),
        level_sampling: match cfg.level_sampling {
            Some(LevelSamplingArg::PerGame) => LevelSampling::PerGame,
            _ => LevelSampling::Stable,
        },
        zero_payment: cfg.zero_payment.unwrap_or(false),
    };
    let d = simulate_dataset(&sim)?;
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();
    let csv_path = dir.join("dataset.csv");
    d.write_csv(&csv_path)?;
    out.written.push(csv_path);
    write_json(
        &dir.join("dataset.json"),
        &SimulationSidecar::from_config(&sim),
        &mut out,
    )?;
    let scenario = Scenario {
        v_star: sim.v_star,
        index: 0,
        seed: sim.seed,
        allocation_games: allocation_games(&sim)?,
    };
    write_json(&dir.join("scenario.json"), &scenario, &mut out)?;
    Ok(out)
}

pub fn cmd_estimate(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let d = load_dataset(cfg)?;
    let scenarios = load_scenarios(RunConfig::require(&cfg.scenarios, "scenarios")?)?;
    let models = cfg.model_specs()?;
    let opts = cfg.fit_options()?;
    let level = cfg.level()?;
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();

    let panels: Vec<Panel> = scenarios
        .iter()
        .map(|s| Panel::new(&d, &s.allocation_games))
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..scenarios.len()).map(move |s| (m, s)))
        .collect();
    let fits: Vec<EstimationResult> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, &(m, s))| fit_panel(&panels[s], &models[m], &opts, derive_seed(seed, "estimate", i as u64)))
        .collect::<Result<_>>()?;

    let mut summary = csv_writer(
        &dir.join("summary.csv"),
        &[
            "model",
            "v_star",
            "n_scenarios",
            "mean_v_hat",
            "mean_relative_error",
            "ci_lower",
            "ci_upper",
            "converged",
        ],
        &mut out,
    )?;
    let mut report = EvalReport::default();
    for (mi, model) in models.iter().enumerate() {
        let est_dir = dir.join("estimates").join(file_label(model));
        fs::create_dir_all(&est_dir)?;
        for (v, group) in by_value(&scenarios) {
            let mut v_hats = Vec::new();
            let mut errors = Vec::new();
            let mut converged = 0;
            for s in group {
                let si = scenarios
                    .iter()
                    .position(|x| std::ptr::eq(x, s))
                    .expect("scenario from list");
                let fit = &fits[mi * scenarios.len() + si];
                write_json(&est_dir.join(format!("v{v}_s{:03}.json", s.index)), fit, &mut out)?;
                v_hats.push(fit.v_hat);
                errors.push(relative_error(fit.v_hat, v)?);
                if fit.converged {
                    converged += 1;
                } else {
                    out.unconverged += 1;
                }
            }
            let n = errors.len() as f64;
            let ci = interval(&errors, level)?;
            summary
                .write_record([
                    model.label(),
                    v.to_string(),
                    errors.len().to_string(),
                    (v_hats.iter().sum::<f64>() / n).to_string(),
                    (errors.iter().sum::<f64>() / n).to_string(),
                    fmt_opt(ci.map(|c| c.lower)),
                    fmt_opt(ci.map(|c| c.upper)),
                    converged.to_string(),
                ])
                .map_err(csv_io)?;
            let mut rec = EvalRecord::new(model.label(), v);
            rec.relative_error = Some(ci.unwrap_or(TInterval {
                lower: errors.iter().sum::<f64>() / n,
                mean: errors.iter().sum::<f64>() / n,
                upper: errors.iter().sum::<f64>() / n,
            }));
            report.records.push(rec);
        }
    }
    summary.flush()?;
    write_json(&dir.join("estimate_records.json"), &report, &mut out)?;
    Ok(out)
}

pub fn cmd_nash_sweep(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let d = load_dataset(cfg)?;
    let scenarios = load_scenarios(RunConfig::require(&cfg.scenarios, "scenarios")?)?;
    let lambdas = cfg
        .lambdas
        .clone()
        .unwrap_or_else(crate::estimation::default_sweep_grid);
    let restarts = cfg.restarts.unwrap_or(crate::estimation::DEFAULT_RESTARTS);
    let dir = cfg.out_dir()?.join("nash_sweep");
    fs::create_dir_all(&dir)?;
    let mut out = Outcome::default();
    for (i, s) in scenarios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "nash-sweep", i as u64));
        let rows = lambda_sweep(&d, &s.allocation_games, &lambdas, restarts, &mut rng)?;
        let path = dir.join(format!("v{}_s{:03}.csv", s.v_star, s.index));
        let file = fs::File::create(&path)?;
        write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
        out.written.push(path);
    }
    Ok(out)
}

pub fn cmd_crossval(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let d = load_dataset(cfg)?;
    let scenarios = load_scenarios(RunConfig::require(&cfg.scenarios, "scenarios")?)?;
    let models = cfg.model_specs()?;
    let opts = cfg.fit_options()?;
    let folds = cfg.folds.unwrap_or(10);
    let rounds = cfg.rounds.unwrap_or(10);
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();
    let mut table = csv_writer(
        &dir.join("crossval.csv"),
        &[
            "model",
            "v_star",
            "scenario",
            "round",
            "fold",
            "v_hat",
            "test_loglik",
            "converged",
        ],
        &mut out,
    )?;
    let mut report = EvalReport::default();
    let mut task = 0u64;
    for model in &models {
        for (v, group) in by_value(&scenarios) {
            let mut means = Vec::new();
            for s in group {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "crossval", task));
                task += 1;
                let cv = cross_validate(&d, &s.allocation_games, model, folds, rounds, &opts, &mut rng)?;
                for f in &cv.folds {
                    if !f.converged {
                        out.unconverged += 1;
                    }
                    table
                        .write_record([
                            model.label(),
                            v.to_string(),
                            s.index.to_string(),
                            f.round.to_string(),
                            f.fold.to_string(),
                            f.v_hat.to_string(),
                            f.test_loglik.to_string(),
                            f.converged.to_string(),
                        ])
                        .map_err(csv_io)?;
                }
                means.push(cv.mean_v_hat);
            }
            let mut rec = EvalRecord::new(model.label(), v);
            rec.cv_estimates = means;
            report.records.push(rec);
        }
    }
    table.flush()?;
    write_json(&dir.join("crossval_records.json"), &report, &mut out)?;
    Ok(out)
}

pub fn cmd_bootstrap(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let d = load_dataset(cfg)?;
    let scenarios = load_scenarios(RunConfig::require(&cfg.scenarios, "scenarios")?)?;
    let models = cfg.model_specs()?;
    let opts = cfg.fit_options()?;
    let alpha = cfg.alpha.unwrap_or(0.10);
    let b = cfg.bootstrap.unwrap_or(1000);
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();
    let estimators: Vec<ModelEstimator> = models
        .iter()
        .map(|m| ModelEstimator {
            model: m.clone(),
            opts: opts.clone(),
        })
        .collect();
    let refs: Vec<&dyn ValueEstimator> = estimators.iter().map(|e| e as &dyn ValueEstimator).collect();
    let mut table = csv_writer(
        &dir.join("bootstrap.csv"),
        &[
            "model",
            "v_star",
            "alpha",
            "resamples",
            "median_fraction",
            "band_lower",
            "band_upper",
        ],
        &mut out,
    )?;
    let mut report = EvalReport::default();
    let mut per_value = Vec::new();
    for (vi, (v, group)) in by_value(&scenarios).into_iter().enumerate() {
        let owned: Vec<Scenario> = group.into_iter().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bootstrap", vi as u64));
        per_value.push((v, bootstrap_threshold(&d, &refs, &owned, alpha, b, &mut rng)?));
    }
    for (mi, model) in models.iter().enumerate() {
        for (v, summaries) in &per_value {
            let s = &summaries[mi];
            table
                .write_record([
                    model.label(),
                    v.to_string(),
                    alpha.to_string(),
                    b.to_string(),
                    s.median_fraction.to_string(),
                    s.band_lower.to_string(),
                    s.band_upper.to_string(),
                ])
                .map_err(csv_io)?;
            let mut rec = EvalRecord::new(model.label(), *v);
            rec.threshold = Some(s.clone());
            report.records.push(rec);
        }
    }
    table.flush()?;
    write_json(&dir.join("bootstrap_records.json"), &report, &mut out)?;
    Ok(out)
}

pub fn cmd_welfare(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let d = load_dataset(cfg)?;
    let scenarios = load_scenarios(RunConfig::require(&cfg.scenarios, "scenarios")?)?;
    let models = cfg.model_specs()?;
    let opts = cfg.fit_options()?;
    let level = cfg.level()?;
    let split = match &cfg.split {
        Some(list) => WelfareSplit::Fixed(list.clone()),
        None => WelfareSplit::Random,
    };
    let dir = cfg.out_dir()?;
    let mut out = Outcome::default();
    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..scenarios.len()).map(move |s| (m, s)))
        .collect();
    let results = tasks
        .par_iter()
        .enumerate()
        .map(|(i, &(m, s))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "welfare", i as u64));
            welfare_prediction(&d, &scenarios[s].allocation_games, &models[m], &split, &opts, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = csv_writer(
        &dir.join("welfare.csv"),
        &[
            "model",
            "v_star",
            "scenario",
            "relative_error",
            "v_hat",
            "fallback_games",
            "converged",
        ],
        &mut out,
    )?;
    let mut report = EvalReport::default();
    for (mi, model) in models.iter().enumerate() {
        for (v, group) in by_value(&scenarios) {
            let mut errors = Vec::new();
            for s in group {
                let si = scenarios
                    .iter()
                    .position(|x| std::ptr::eq(x, s))
                    .expect("scenario from list");
                let w = &results[mi * scenarios.len() + si];
                if !w.fit.converged {
                    out.unconverged += 1;
                }
                table
                    .write_record([
                        model.label(),
                        v.to_string(),
                        s.index.to_string(),
                        w.relative_error.to_string(),
                        w.fit.v_hat.to_string(),
                        w.games.iter().filter(|g| g.fallback).count().to_string(),
                        w.fit.converged.to_string(),
                    ])
                    .map_err(csv_io)?;
                errors.push(w.relative_error);
            }
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            let mut rec = EvalRecord::new(model.label(), v);
            rec.welfare_error = Some(interval(&errors, level)?.unwrap_or(TInterval {
                lower: mean,
                mean,
                upper: mean,
            }));
            report.records.push(rec);
        }
    }
    table.flush()?;
    write_json(&dir.join("welfare_records.json"), &report, &mut out)?;
    Ok(out)
}

/// Files named `*records.json` under `dir`, merged in path order.
pub fn collect_records(dir: &Path) -> Result<EvalReport> {
    if !dir.is_dir() {
        return Err(Error::MissingResults(format!("{} is not a directory", dir.display())));
    }
    let mut report = EvalReport::default();
    let mut found = false;
    for file in json_files(dir)? {
        if !file
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("records.json"))
        {
            continue;
        }
        let text = fs::read_to_string(&file)?;
        let part: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", file.display())))?;
        report.merge(part);
        found = true;
    }
    if !found {
        return Err(Error::MissingResults(format!(
            "no *records.json files under {}",
            dir.display()
        )));
    }
    Ok(report)
}

/// Writes a models × v* table with a marker column per v*.
fn write_table(
    path: &Path,
    report: &EvalReport,
    cell: impl Fn(&EvalRecord) -> Option<TInterval>,
    higher_is_better: bool,
    out: &mut Outcome,
) -> Result<()> {
    let mut models: Vec<&str> = Vec::new();
    let mut values: BTreeMap<u64, f64> = BTreeMap::new();
    for r in report.records.iter().filter(|r| cell(r).is_some()) {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        // Positive floats order like their bit patterns.
        values.insert(r.v_star.to_bits(), r.v_star);
    }
    let values: Vec<f64> = values.into_values().collect();
    let mut header = vec!["model".to_string()];
    for v in &values {
        for suffix in ["", "_lower", "_upper", "_mark"] {
            header.push(format!("v{v}{suffix}"));
        }
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = csv_writer(path, &header_refs, out)?;
    let grid: Vec<Vec<Option<TInterval>>> = models
        .iter()
        .map(|m| {
            values
                .iter()
                .map(|v| {
                    report
                        .records
                        .iter()
                        .find(|r| r.model == *m && r.v_star == *v)
                        .and_then(&cell)
                })
                .collect()
        })
        .collect();
    let marks: Vec<Vec<_>> = (0..values.len())
        .map(|c| mark_best(&grid.iter().map(|row| row[c]).collect::<Vec<_>>(), higher_is_better))
        .collect();
    for (ri, m) in models.iter().enumerate() {
        let mut row = vec![m.to_string()];
        for (ci, c) in grid[ri].iter().enumerate() {
            row.push(fmt_opt(c.map(|c| c.mean)));
            row.push(fmt_opt(c.map(|c| c.lower)));
            row.push(fmt_opt(c.map(|c| c.upper)));
            row.push(marks[ci][ri].label().to_string());
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<Outcome> {
    let results = cfg
        .results
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::InvalidConfig("missing required setting `results`".into()))?;
    let report = collect_records(&results)?;
    let dir = cfg.out.clone().unwrap_or(results);
    fs::create_dir_all(&dir)?;
    let mut out = Outcome::default();
    write_table(&dir.join("table2.csv"), &report, |r| r.relative_error, false, &mut out)?;
    write_table(&dir.join("table3.csv"), &report, |r| r.welfare_error, false, &mut out)?;
    write_table(
        &dir.join("table4.csv"),
        &report,
        |r| {
            r.threshold.as_ref().map(|t| TInterval {
                lower: t.band_lower,
                mean: t.median_fraction,
                upper: t.band_upper,
            })
        },
        true,
        &mut out,
    )?;
    write_json(&dir.join("report.json"), &report, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let file = RunConfig {
            seed: Some(1),
            k: Some(3),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.k, Some(3));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"models": ["QRE-QL4", {"strategic": "Nash"}]}"#).unwrap();
        assert_eq!(c.models.unwrap().len(), 2);
    }

    #[test]
    fn model_arg_parsing() {
        assert!(parse_model_arg("PQCH-QL4").is_ok());
        assert!(parse_model_arg("Bogus").is_err());
        assert!(parse_model_arg(r#"{"strategic":"QRE","lambda":0.3}"#).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(Outcome::default())), 0);
        assert_eq!(
            exit_code(&Ok(Outcome {
                written: vec![],
                unconverged: 2
            })),
            3
        );
        assert_eq!(exit_code(&Err(Error::InvalidConfig("x".into()))), 2);
        assert_eq!(exit_code(&Err(Error::Io(std::io::Error::other("x")))), 1);
    }

    #[test]
    fn nash_default_lambda_in_grid() {
        assert!(crate::estimation::default_sweep_grid().contains(&crate::models::NASH_LAMBDA));
    }
}
