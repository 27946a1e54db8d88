use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got} (index {index})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
        index: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("operating point is not an equilibrium: residual {residual:.3e} exceeds {tolerance:.1e}")]
    NotEquilibrium { residual: f64, tolerance: f64 },

    #[error("matrix is not Hurwitz: eigenvalue {re:+.6e}{im:+.6e}i has non-negative real part")]
    NotHurwitz { re: f64, im: f64 },

    #[error("pair is unobservable (rank {rank} < {n}); chain-form transform does not exist")]
    Unobservable { rank: usize, n: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unknown subsystem id {0}")]
    UnknownSubsystem(usize),

    #[error("cascade precondition violated: {0}")]
    NotCascade(String),

    #[error("linear solve failed: {0}")]
    Singular(&'static str),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
