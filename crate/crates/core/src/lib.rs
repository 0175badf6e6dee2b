//! Numerical engine for nonlinear filtering of partially observed diffusions
//! through divergence-form stochastic PDEs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod diagnostics;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod rng;
pub mod sde_sim;
pub mod spde_solver;
pub mod zakai;
