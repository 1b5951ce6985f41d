use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    DegenerateRotation { angle: f64 },
    #[error("alignment failed: {0}")]
    AlignmentFailure(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario validation failed: {0}")]
    Validation(String),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("window must hold at least {min} keyframes, got {got}")]
    WindowTooSmall { min: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory association failed: {0}")]
    Association(String),
    #[error("degradation rate undefined: reference ATE is {0}")]
    UndefinedRate(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl IoError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
