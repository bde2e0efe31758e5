//! Real semidefinite programming layer.
//!
//! Problems are stated as a maximization over a set of real symmetric PSD
//! blocks, one nonnegative-orthant vector and one free vector, subject to
//! linear equality and inequality constraints over individual variable
//! entries. Complex Hermitian programs are handled through the real
//! embedding in [`embed`].
//!
//! The solver is a homogeneous self-dual primal-dual interior-point method
//! with Nesterov-Todd scaling and a Mehrotra predictor-corrector. Solutions
//! are never trusted on the solver's word alone: [`kkt_residuals`] recomputes
//! primal feasibility, dual feasibility and the duality gap from the raw
//! problem data.

mod cones;
pub mod dump;
pub mod embed;
mod error;
mod ipm;
mod kkt;
mod problem;
mod stdform;

pub use embed::{herm_terms, herm_to_real, real_to_herm};
pub use error::ConicError;
pub use ipm::{solve_sdp, SolveOptions};
pub use kkt::{kkt_residuals, Residuals};
pub use problem::{Constraint, SdpProblem, SdpSolution, Sense, Status, Var};

pub type Result<T> = std::result::Result<T, ConicError>;

/// Crate version, recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
