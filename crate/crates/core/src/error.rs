use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteInput(String),

    #[error("at least 2 variables are required, got {0}")]
    TooFewVariables(usize),

    #[error("dataset has no observations")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// No sample carries positive kernel weight at the query point.
    #[error("empty kernel window at g = {g} (bandwidth {bandwidth}){}", index.map(|i| format!(", observation {i}")).unwrap_or_default())]
    EmptyWindow {
        g: f64,
        bandwidth: f64,
        index: Option<usize>,
    },

    #[error("bandwidth candidate grid is empty")]
    EmptyGrid,

    #[error("no bandwidth candidate produced a nonempty window for every observation")]
    NoFeasibleBandwidth,

    #[error("linear program exceeded {0} iterations")]
    IterationLimit(usize),

    #[error("numerical failure in linear program solver: {0}")]
    Numerical(String),

    #[error("linear program too large for the enumeration oracle: {0}")]
    TooLargeForOracle(String),

    /// A column program has no feasible point at the requested lambda.
    #[error("column {column} is infeasible at lambda = {lambda} (bound violation {violation:.3e}){}", sample.map(|s| format!(", sample {s}")).unwrap_or_default())]
    InfeasibleColumn {
        column: usize,
        lambda: f64,
        violation: f64,
        sample: Option<usize>,
    },

    #[error("no lambda in the grid admits a feasible solution")]
    AllInfeasible,

    #[error("confounder design is rank deficient")]
    DegenerateRegression,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("too few samples to split: n = {0}")]
    TooFewSamples(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
