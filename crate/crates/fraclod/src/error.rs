use thiserror::Error;

/// Errors surfaced by the geometry, discretization and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("mesh does not resolve the interface network at scale {scale}")]
    Unresolved { scale: usize },

    #[error("scale {0} exceeds the supported maximum {1}")]
    ScaleOutOfRange(usize, usize),

    #[error("path construction failed after {retries} reseeds (level {level}, cell {cell})")]
    PathConstruction {
        level: usize,
        cell: usize,
        retries: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("solver did not converge: {0} iterations, relative residual {1:.3e}")]
    NoConvergence(usize, f64),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("singular saddle-point system")]
    SingularSaddle,

    #[error("ill-conditioned Gram matrix (condition estimate {0:.3e})")]
    IllConditionedGram(f64),

    #[error("problem too large for ideal corrector mode ({0} fine dofs, limit {1})")]
    TooLargeForIdeal(usize, usize),

    #[error("config: {0}")]
    Config(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
