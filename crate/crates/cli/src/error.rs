use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] kacwalk::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Outputs were written but a numerical check did not hold.
    #[error("accuracy check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 0 ok, 1 i/o, 2 config, 3 accuracy, 4 infeasible.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Check(_) => 3,
            CliError::Core(e) => match e {
                kacwalk::Error::InvalidArgument(_) | kacwalk::Error::UnsupportedDimension(_) => 2,
                kacwalk::Error::Accuracy { .. } | kacwalk::Error::UnsupportedFlux(_) => 3,
                kacwalk::Error::InfeasibleKappa { .. } => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
