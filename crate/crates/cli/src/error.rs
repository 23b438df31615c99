use thiserror::Error;

/// Failure of a command, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Missing(_) => 4,
            Self::Diverged(_) => 5,
            Self::Internal(_) => 1,
        }
    }
}

impl From<meshgcn::Error> for CliError {
    fn from(e: meshgcn::Error) -> Self {
        use meshgcn::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) | E::Json(_) | E::Format(_) | E::Parse { .. } | E::NonTriangleFace { .. } | E::InvalidMesh(_) => {
                Self::Io(msg)
            }
            E::ConfigMismatch(_)
            | E::ShapeMismatch(_)
            | E::InvalidProbability(_)
            | E::DegenerateLandmarks(_)
            | E::EmptyMask
            | E::EmptyDataset
            | E::EmptyMesh
            | E::BehindCamera(_)
            | E::RankDeficiency { .. } => Self::Config(msg),
            E::DivergedLoss { .. } => Self::Diverged(msg),
            _ => Self::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}
