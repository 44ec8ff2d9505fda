use thiserror::Error;

/// Crate-wide error type. Numeric payloads are stored as `f64` regardless of
/// the working scalar type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input value {value}")]
    NonFinite { value: f64 },

    #[error("value {value} outside quantizer range [{lower}, {upper}] in strict mode")]
    OutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("invalid quantizer range [{lower}, {upper}]")]
    InvalidRange { lower: f64, upper: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("sample size {n} too small for range policy (requires {requirement})")]
    SampleSizeTooSmall { n: usize, requirement: String },

    #[error("sketch size {m} exceeds sample count {n}")]
    SketchTooLarge { m: usize, n: usize },

    #[error("bad magic bytes in header")]
    BadMagic,

    #[error("payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("moment matrix not positive definite (min eigenvalue {min_eig:.3e}); more samples needed")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("singular design matrix")]
    SingularDesign,

    #[error("quadrature failed to reach tolerance {tol:.3e} (error estimate {err:.3e})")]
    QuadratureNonConvergence { tol: f64, err: f64 },

    #[error("debias row {row} infeasible at the given slack (best residual {best_residual:.3e})")]
    Infeasible { row: usize, best_residual: f64 },

    #[error("no interior maximum in search interval [{lower}, {upper}]")]
    NoInteriorMaximum { lower: f64, upper: f64 },

    #[error("collision probability {pi} is numerically degenerate")]
    DegenerateProbability { pi: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
