use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported dimension {0}, only d = 2 and d = 3 are implemented")]
    UnsupportedDimension(usize),

    /// A quadrature or Monte Carlo estimate missed its requested accuracy.
    #[error("{what}: achieved relative error {achieved:.3e} exceeds tolerance {requested:.3e}")]
    Accuracy {
        what: String,
        achieved: f64,
        requested: f64,
    },

    #[error("requested flux mass kappa = {kappa} is below the minimal admissible mass kappa* = {kappa_star}")]
    InfeasibleKappa { kappa: f64, kappa_star: f64 },

    #[error("unsupported flux representation: {0}")]
    UnsupportedFlux(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
