//! Hybrid active/passive RIS-assisted ISAC joint beamforming design.
//!
//! Pipeline: [`model`] instantiates a scenario and channels, [`bs_stage`] and
//! [`ris_stage`] solve the two alternating subproblems, [`optimizer`] drives
//! the alternation and [`metrics`] audits every result independently.

mod error;
pub mod bs_stage;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod ris_stage;

pub use error::{HrisError, Result};
