use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("solver needs the optimal value but the oracle does not provide one")]
    MissingOptimalValue,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("residual {index} is {value:e}, too close to a kink of the l1 loss")]
    NearKink { index: usize, value: f64 },

    #[error("operator has {unknowns} unknowns, above the densification limit {limit}")]
    TooLarge { unknowns: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}
