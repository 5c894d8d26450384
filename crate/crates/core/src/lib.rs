//! Potential theory for the weighted degenerate heat operator
//! `L_a u = D_t(|y|^a u) - div(|y|^a grad u)`, `a in (-1, 1)`.
//!
//! The crate evaluates the fundamental solution and its derivatives, solves
//! Dirichlet problems on space-time boxes with a double-layer potential,
//! computes thermal capacities through a discrete equilibrium-measure linear
//! program, evaluates heat-ball mean values, and runs a Wiener-series test for
//! boundary regularity.

pub mod capacity;
pub mod dirichlet_bem;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod meanvalue;
pub mod special_functions;
pub mod weighted_quadrature;
pub mod wiener;

pub use error::{Error, Result};
pub use kernel::{Kernel, KernelParams, SpaceTimePoint};
