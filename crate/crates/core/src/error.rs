use thiserror::Error;

/// Failure modes shared by every analysis routine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("matrix is not Hermitian (relative residual {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not unitary (residual {0:.3e})")]
    NotUnitary(f64),

    #[error("family is not simultaneously diagonalizable: {0}")]
    NotSimultaneouslyDiagonalizable(String),

    #[error("no simultaneous singular value decomposition: {0}")]
    NoSimultaneousSvd(String),

    #[error("internal contract violation: {0}")]
    InternalContractViolation(String),

    #[error("Schmidt rank {rank} exceeds the bound {bound}")]
    RankTooHigh { rank: usize, bound: usize },

    #[error("witness residual {residual:.3e} exceeds {threshold:.3e}")]
    WitnessResidualTooLarge { residual: f64, threshold: f64 },

    #[error("operator is not invertible: {0}")]
    NotInvertible(String),

    #[error("term {0} is not supported on its projector block")]
    BadBlockSupport(usize),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid bipartition: {0}")]
    InvalidBipartition(String),

    #[error("invalid controlled form: {0}")]
    InvalidControlledForm(String),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("theorem anomaly: {0}")]
    TheoremViolation(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
