//! Optimal control of a one-dimensional semilinear parabolic equation with
//! time-dependent controls acting through fixed spatial profiles: discretization,
//! solvers, derivatives of the reduced objective, a bang-bang aware optimizer and
//! sampled diagnostics of second-order conditions and stability under perturbations.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod law;
pub mod optimizer;
pub mod pde;
pub mod presets;
pub mod problem;
pub mod report;
pub mod smsr;

pub use error::{Error, Result};
