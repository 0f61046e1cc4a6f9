use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cube not aligned with the grid: {0}")]
    Misaligned(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("cubes belong to different dyadic grids")]
    MixedGrids,
    #[error("invalid exponent: {0}")]
    Exponent(String),
    #[error("matrix at cell {cell} is not symmetric (defect {defect:e})")]
    NotSymmetric { cell: usize, defect: f64 },
    #[error("matrix at cell {cell} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { cell: usize, min_eig: f64 },
    #[error("target lies outside the hull (gap {gap:e}, separating direction {direction:?})")]
    OutsideHull { direction: Vec<f64>, gap: f64 },
    #[error("measure budget violated: {0}")]
    Budget(String),
    #[error("divergent integral: {0}")]
    Divergent(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
