use crate::Status;

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),
    #[error("operation requires an optimal solution, got status {0:?}")]
    NotOptimal(Status),
    #[error("solution does not match problem layout: {0}")]
    LayoutMismatch(String),
}
