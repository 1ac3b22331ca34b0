//! Variational calculus over finitely supported probability measures in the
//! Wasserstein space.
//!
//! - [`measures`]: discrete measures, moments, pushforwards.
//! - [`transport`]: exact optimal transport (transportation simplex) and W2.
//! - [`tangent`]: variations anchored at a measure and their local geometry.
//! - [`functionals`]: the functional catalog, evaluation and subgradients.
//! - [`constraints`]: constraint sets and normal-cone elements.
//! - [`optimality`]: Fermat and KKT stationarity residuals.
//! - [`solvers`]: closed-form and iterative solvers for the worked problems.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod measures;
pub mod transport;
pub mod tangent;
pub mod functionals;
pub mod constraints;
pub mod optimality;
pub mod solvers;

pub use error::{Error, Result};
pub use measures::DiscreteMeasure;
pub use transport::{CostFunction, TransportPlan};
