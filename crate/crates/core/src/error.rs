use hris_conic::ConicError;

#[derive(Debug, thiserror::Error)]
pub enum HrisError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("CU {0} receives no power from the relaxed beamformer")]
    DegenerateCu(usize),
    #[error("conic solver: {0}")]
    Solver(#[from] ConicError),
    #[error("scenario file: {0}")]
    Scenario(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HrisError>;
