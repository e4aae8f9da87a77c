use thiserror::Error;

/// Errors raised by the pricing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("correlation matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NonPositivePivot { index: usize, pivot: f64 },

    #[error("asset price must be positive, got S[{index}] = {value}")]
    Domain { index: usize, value: f64 },

    #[error(
        "grid steps are inconsistent: axis {axis} implies base step {found}, expected {expected}"
    )]
    InconsistentSteps {
        axis: usize,
        expected: f64,
        found: f64,
    },

    #[error("grid index {index:?} out of range")]
    IndexOutOfRange { index: Vec<usize> },

    #[error(
        "exponential action did not converge within {budget} operator applications per substep"
    )]
    ConvergenceFailure { budget: usize },

    #[error("tree branch probabilities outside [0, 1]: {0:?}")]
    InvalidProbabilities(Vec<f64>),

    #[error("spot {spot:?} maps to y = {y:?}, outside the computational domain")]
    OutOfDomain { spot: Vec<f64>, y: Vec<f64> },

    #[error("boundary value at node {node} drifted from {expected} to {found}")]
    BoundaryDrift {
        node: usize,
        expected: f64,
        found: f64,
    },

    #[error("stability conditions violated: h = {h} (max {h_max}), k = {k} (bound {k_max})")]
    Unstable {
        h: f64,
        h_max: f64,
        k: f64,
        k_max: f64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: {inner}")]
    Stage {
        stage: &'static str,
        inner: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tags the error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                inner: Box::new(e),
            },
        }
    }

    /// The error without any stage tag.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { inner, .. } => inner.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
