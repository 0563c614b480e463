use thiserror::Error;

/// Errors raised by the simulators, samplers and oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dimension {dim} exceeds the configured cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("operator `{name}` is not hermitian (max deviation {deviation:.3e})")]
    NotHermitian { name: String, deviation: f64 },

    #[error("matrix exponential did not converge: {0}")]
    NonConvergence(String),

    #[error(
        "covariance matrix is not positive semidefinite: most negative eigenvalue {min_eigenvalue:.6e} \
         (tolerance {tolerance:.3e})"
    )]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("state has zero norm at step {step}; trajectory is degenerate")]
    ZeroNorm { step: usize },

    #[error("all statistical weights are zero")]
    ZeroWeights,

    #[error("exact-dephasing closure requires commuting operators, commutator norm is {norm:.3e}; use the weak-coupling closure instead")]
    NonCommuting { norm: f64 },

    #[error("the zero mode of a massless lattice has zero frequency and cannot be retained")]
    MasslessZeroMode,

    #[error("fock cutoff too small: top-level population of mode {mode} is {population:.3e}")]
    FockLeakage { mode: usize, population: f64 },

    #[error("exceptional realization: bilinear denominator {denominator:.3e} is below threshold")]
    ExceptionalRealization { denominator: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trajectory {index} (seed {seed}): {source}")]
    InTrajectory { index: u64, seed: u64, source: Box<Error> },
}

impl Error {
    /// The underlying error with any trajectory context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::InTrajectory { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
