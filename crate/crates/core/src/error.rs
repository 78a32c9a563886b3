use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input document does not match its schema. `key` names the offending field.
    #[error("invalid `{key}`: {message}")]
    Schema { key: String, message: String },

    #[error("asymmetric coupling: J{i}{j} = {a} Hz but J{j}{i} = {b} Hz (key `j_hz`)")]
    AsymmetricCoupling { i: usize, j: usize, a: f64, b: f64 },

    #[error("spin index {index} out of range 1..={n_spins}")]
    SpinIndex { index: usize, n_spins: usize },

    #[error("duplicate spin index {0} in product operator label")]
    DuplicateSpin(usize),

    #[error("cannot parse operator expression `{expr}`: {message}")]
    Expression { expr: String, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |A - A†| = {0:.3e})")]
    NotHermitian(f64),

    #[error("Hermitian eigendecomposition did not converge")]
    Eigendecomposition,

    #[error("invalid pulse program: {0}")]
    Program(String),

    #[error("invalid acquisition parameters: {0}")]
    Acquisition(String),

    #[error("invalid spectral region: {0}")]
    Region(String),

    #[error("invalid objective: {0}")]
    Objective(String),

    #[error("unknown spin system `{0}`")]
    UnknownSystem(String),

    #[error("non-finite loss in task {task} ({kind})")]
    NonFiniteLoss { task: usize, kind: String },

    #[error("non-finite gradient at coordinate {0}")]
    NonFiniteGradient(usize),

    #[error("forward trajectory was not recorded")]
    MissingTrajectory,

    #[error("invalid optimizer configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("zero-norm operator in fidelity")]
    ZeroNorm,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn schema(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { key: key.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Numerical failures (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotHermitian(_)
                | Error::Eigendecomposition
                | Error::NonFiniteLoss { .. }
                | Error::NonFiniteGradient(_)
                | Error::ZeroNorm
                | Error::UndefinedRatio(_)
        )
    }
}
