//! Crate-wide error type.

use crate::logit::LogitFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input data or configuration.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A row category has zero voters across the whole dataset, so its
    /// proportions are undefined.
    #[error("row {row} has zero total count across all units")]
    EmptyRowMargin { row: usize },

    /// Generator specification violates one of its invariants.
    #[error("invalid generator spec: {0}")]
    Spec(String),

    #[error("Dirichlet precision must be positive, got {0}")]
    InvalidPrecision(f64),

    #[error("need at least {need} units, got {got}")]
    TooFewUnits { need: usize, got: usize },

    /// The margin design matrix is (numerically) collinear across units.
    #[error("rank-deficient margin design: {0}")]
    RankDeficient(String),

    #[error("covariate '{name}' missing on unit '{unit_id}'")]
    MissingCovariate { name: String, unit_id: String },

    /// The optimizer hit its iteration cap before reaching the gradient
    /// tolerance. Carries the best parameters found so far.
    #[error(
        "optimizer stopped at gradient norm {grad_norm:.3e} after {iterations} \
         iterations (tolerance {tol:.3e})"
    )]
    NonConvergence {
        grad_norm: f64,
        iterations: usize,
        tol: f64,
        best: Box<LogitFit>,
    },

    /// A working covariance could not be inverted even with ridge fallback.
    #[error("singular working covariance on unit '{unit_id}'")]
    SingularWeight { unit_id: String },

    /// Margin fitting hit its iteration cap. Carries the last iterate.
    #[error(
        "margin fitting stopped at discrepancy {achieved:.3e} after {iterations} \
         iterations (tolerance {tol:.3e})"
    )]
    IpfNoConvergence {
        achieved: f64,
        iterations: usize,
        tol: f64,
        last: Vec<Vec<f64>>,
    },

    /// A zero cell in the seed table makes the target margins unattainable.
    #[error("structural zero makes target margins unattainable: {0}")]
    StructuralZero(String),

    /// A margin proportion does not vary across units, so correlations with
    /// it are undefined.
    #[error("margin proportion of row {row} is constant across units")]
    InsufficientVariation { row: usize },

    #[error("need at least {need} units for {groups} quantile groups, got {got}")]
    InsufficientUnits {
        need: usize,
        got: usize,
        groups: usize,
    },

    #[error("operation requires a 2x2 table, got {rows}x{cols}")]
    DimensionError { rows: usize, cols: usize },

    /// Wraps a per-unit failure with the offending unit id.
    #[error("unit '{unit_id}': {source}")]
    Unit {
        unit_id: String,
        #[source]
        source: Box<Error>,
    },

    /// Internal numerical failure (ill-conditioned solve, invariant breach).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// File format problem, with the offending path and location.
    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a unit id to an error bubbling out of per-unit work.
    pub fn for_unit(self, unit_id: &str) -> Self {
        Error::Unit {
            unit_id: unit_id.to_string(),
            source: Box::new(self),
        }
    }
}
