//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A function argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A policy returned action probabilities that do not sum to one.
    #[error("policy distribution not normalized: sum = {sum:.17}")]
    PolicyNotNormalized { sum: f64 },

    /// Best and worst deterministic policies have (numerically) equal value,
    /// so reward normalization is undefined.
    #[error("degenerate environment: best-worst value gap {gap:e} is below 1e-12")]
    DegenerateEnvironment { gap: f64 },

    /// A logged action has zero propensity under the policy that is supposed
    /// to have produced it.
    #[error("coverage violation: action {action} has zero propensity in context {context}")]
    CoverageViolation { context: String, action: String },

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// The counterfactual transform needs at least one positive-reward row.
    #[error("dataset contains no positive-reward samples")]
    NoPositives,

    /// The optimizer produced a non-finite objective value.
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    /// A data file does not match the expected schema.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Wraps a failure with the environment seed whose run produced it.
    #[error("environment seed {env_seed}: {source}")]
    WithSeed {
        env_seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
