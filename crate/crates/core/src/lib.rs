#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Forward filtering, backward effect smoothing and retrodiction for a qubit
//! whose radiative decay is monitored by homodyne detection.

pub mod deterministic;
pub mod ensemble;
pub mod error;
pub mod format;
pub mod geometry;
pub mod measurement;
pub mod params;
pub mod quadrature;
pub mod qubit;
pub mod record;
pub mod trajectory;

pub use error::{PqsError, Result};
pub use params::SimParams;
pub use qubit::{BlochVector, PreparedState, QubitOperator};
