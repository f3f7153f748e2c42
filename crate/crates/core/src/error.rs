use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integer overflow computing {0}")]
    Overflow(&'static str),

    #[error("index ({n}, {m}) out of range for L = {sites}")]
    IndexOutOfRange { n: usize, m: usize, sites: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dense two-particle matrix for L = {sites} exceeds the cap L <= {cap}; use the matrix-free operator")]
    DenseSizeCap { sites: usize, cap: usize },

    #[error("eigensolver failed to converge on eigenvalue indices {first}..{end}")]
    EigenNoConvergence { first: usize, end: usize },

    #[error("zero vector has no inverse participation ratio")]
    ZeroVector,

    #[error("eigenvectors were not computed")]
    MissingEigenvectors,

    #[error("eigenvector matrix is ill-conditioned (estimate {condition:e} > {limit:e})")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("base energy {re}{im:+}i lies within {min_gap:e} of the spectrum (tolerance {tolerance:e})")]
    BaseEnergyOnSpectrum { re: f64, im: f64, min_gap: f64, tolerance: f64 },

    #[error("determinant phase jumps by {jump:.3} rad between samples at {samples} samples; more samples required")]
    PhaseJump { jump: f64, samples: usize },

    #[error("winding changed from {coarse} to {fine} under sample doubling")]
    UnstableWinding { coarse: i64, fine: i64 },

    #[error("step size {dt} exceeds the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("integrator failed: {0}")]
    Integrator(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("sweep configuration: {0}")]
    Config(String),

    #[error("at h = {h}: {source}")]
    AtNonHermiticity {
        h: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error originates in a numerical routine rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::EigenNoConvergence { .. }
            | Error::IllConditioned { .. }
            | Error::BaseEnergyOnSpectrum { .. }
            | Error::PhaseJump { .. }
            | Error::UnstableWinding { .. }
            | Error::Integrator(_)
            | Error::ZeroVector => true,
            Error::AtNonHermiticity { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
