use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vertex {0} is not referenced by any face")]
    IsolatedVertex(usize),
    #[error("vertex {0} has zero degree")]
    ZeroDegree(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("lambda_max must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face at line {line} is not a triangle")]
    NonTriangleFace { line: usize },
    #[error("decimation stalled at {reached} vertices before reaching {target}")]
    TargetUnreachable { reached: usize, target: usize },
    #[error("coarse mesh has no faces")]
    EmptyCoarseMesh,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("probability must lie in [0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("deformation modes are rank deficient after {attempts} attempts")]
    RankDeficiency { attempts: usize },
    #[error("vertex {0} projects behind the camera")]
    BehindCamera(usize),
    #[error("degenerate landmarks: {0}")]
    DegenerateLandmarks(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("region mask selects no vertices")]
    EmptyMask,
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
