use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular element: {0}")]
    Singular(String),

    #[error("pole at {point:?}: |cx+d| = {modulus:e}")]
    Pole { point: Vec<f64>, modulus: f64 },

    #[error("finite-difference stencil at {point:?} touches the singular set")]
    Stencil { point: Vec<f64> },

    #[error("field norm vanishes on the stencil at {point:?} (p < 2)")]
    VanishingNorm { point: Vec<f64> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("estimation failed: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
