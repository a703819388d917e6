//! Resource provisioning for end-to-end network slices spanning RAN, CRAN and
//! core-network domains.
//!
//! The crate provides:
//!
//! * [`model`]: topology, slice and allocation bookkeeping.
//! * [`utility`]: the marginal-benefit utility family, delay and payoff.
//! * [`drp`]: the iterative price-taking auction between slice managers and nodes.
//! * [`baselines`]: uniform allocation, multi-domain DRF and per-domain DRF.
//! * [`oracle`]: an interior-point reference solver, KKT certificates and
//!   fairness checks used to certify auction outcomes.
//! * [`harness`]: scenario generation, experiment campaigns, metrics and CSV.

pub mod baselines;
pub mod drp;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod utility;

pub use error::{Error, Result};
