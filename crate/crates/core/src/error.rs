use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate dispersion pair at k = {k}: |w1 - w2| = {gap:e}")]
    Degenerate { k: num_complex::Complex64, gap: f64 },

    #[error("matrix S is singular at k = 0")]
    SingularAtOrigin,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("ill-conditioned boundary system at k = {k}: |Delta| / scale = {ratio:e}")]
    Conditioning { k: num_complex::Complex64, ratio: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unstable time stepping: {0}")]
    Unstable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
