use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing file {path}: {source}")]
    MissingFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Core(#[from] wiretap_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        use wiretap_core::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Core(E::Config(_) | E::Domain(_) | E::LengthMismatch { .. } | E::Dimension(_)) => 2,
            Self::Core(E::Budget { .. }) => 3,
            Self::MissingFile { .. } => 4,
            Self::Core(E::Format(_)) => 5,
            Self::Core(E::NonFinite(_)) => 6,
            Self::Invariant(_) => 7,
            Self::Io(_) | Self::Core(E::Io(_)) => 8,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
