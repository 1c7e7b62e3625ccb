use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite payoff at cell ({row}, {col})")]
    NonFinitePayoff { row: usize, col: usize },

    #[error("game is flagged symmetric but u2 differs from the transpose of u1 at ({row}, {col})")]
    SymmetryViolation { row: usize, col: usize },

    #[error("invalid sampling range [{lo}, {hi}] or action count {n_actions}")]
    InvalidRange { lo: f64, hi: f64, n_actions: usize },

    #[error("value must be strictly positive, got {0}")]
    NonPositiveValue(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid mixed strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid level-0 weights: {0}")]
    InvalidWeights(String),

    #[error("Poisson mean must be nonnegative, got {0}")]
    NegativeTau(f64),

    #[error("fixed point did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("no other participant played game {game} (participant {participant})")]
    NoOtherObservations { game: String, participant: String },

    #[error("equilibrium model requires an empirical opponent distribution")]
    MissingEmpirical,

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("parameter out of bounds: {0}")]
    OutOfBounds(String),

    #[error("parameter vector has length {found}, schema expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },

    #[error("dataset has no observations")]
    EmptyDataset,

    #[error("every optimizer restart produced a non-finite objective")]
    AllRestartsFailed,

    #[error("need at least {needed} participants, found {found}")]
    TooFewParticipants { needed: usize, found: usize },

    #[error("need at least 2 samples, found {0}")]
    TooFewSamples(usize),

    #[error("welfare split needs an even number of games, found {0}")]
    OddGameCount(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown game id {0}")]
    UnknownGame(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("missing results: {0}")]
    MissingResults(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
