use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("quadrature did not converge: estimated error {estimate:.3e} exceeds tolerance {tol:.3e} (best value {value})")]
    Quadrature { value: f64, estimate: f64, tol: f64 },

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("distributional coincidence: detector {detector} appears twice at time {time}; use the smoothed correlator")]
    Coincidence { detector: usize, time: f64 },

    #[error("stationary state is not unique (null-space dimension {0})")]
    NonUniqueStationary(usize),

    #[error("correlator order {0} exceeds the smoothed-correlator limit of 4")]
    OrderLimit(usize),

    #[error("result has imaginary residue {0:.3e}")]
    ImaginaryResidue(f64),

    #[error("state positivity violated at step {step}: minimum eigenvalue {min_eigenvalue:.3e}")]
    Positivity { step: usize, min_eigenvalue: f64 },

    #[error("linear-state trace {trace:.3e} left the representable range at step {step}")]
    TraceWeight { step: usize, trace: f64 },

    #[error("trajectory with seed {seed} aborted: {source}")]
    TrajectoryAborted {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("signal grid [{start}, {end}] does not cover filter support [{lo}, {hi}]")]
    GridCoverage { start: f64, end: f64, lo: f64, hi: f64 },

    #[error("model file: {0}")]
    Schema(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Numeric,
    Convergence,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Dimension(_)
            | Error::InvalidInput(_)
            | Error::Schema(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::OrderLimit(_)
            | Error::Coincidence { .. }
            | Error::GridCoverage { .. } => ErrorCategory::Config,
            Error::Quadrature { .. } | Error::NotConverged(_) => ErrorCategory::Convergence,
            Error::TrajectoryAborted { source, .. } => source.category(),
            Error::Overflow(_)
            | Error::NonUniqueStationary(_)
            | Error::ImaginaryResidue(_)
            | Error::Positivity { .. }
            | Error::TraceWeight { .. } => ErrorCategory::Numeric,
        }
    }
}
