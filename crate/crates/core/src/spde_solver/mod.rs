//! Finite-volume discretization of divergence-form stochastic PDEs on a
//! truncated box with Dirichlet-zero boundary, advanced by an
//! implicit–explicit Euler scheme driven by external noise increments.

mod assemble;
mod export;
mod grid;
mod residual;
pub mod sparse;
mod step;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use assemble::{
    assemble_forcing, assemble_operator, assembly_bytes, ForcingSnapshot, OperatorStencil,
};
pub use export::{read_snapshots_binary, write_snapshots_binary, write_snapshots_csv};
pub use grid::{Grid, Index};
pub use residual::{smooth_bump, weak_residual, WeakResidual};
pub use step::{solve, step, FieldState, ImplicitMatrix, StepReport, Trajectory};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error("grid with {nodes} nodes exceeds the memory budget of {budget} bytes")]
    AssemblyOverflow { nodes: usize, budget: usize },
    #[error("coefficient {what} is not finite at {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(
        "linear solver stopped after {iterations} iterations with relative residual {residual:e}"
    )]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("max-norm grew by a factor {growth:e} in the step ending at t = {t}")]
    Instability { growth: f64, t: f64 },
    #[error("test function is nonzero at {point:?}, within two cells of the boundary")]
    SupportViolation { point: Vec<f64>, value: f64 },
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Container(#[from] crate::container::ContainerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit in `L`, explicit in the noise, one combined update.
    Imex,
    /// Implicit deterministic substep followed by the explicit stochastic one.
    LieSplitting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub scheme: Scheme,
    /// Relative residual tolerance of the implicit solve.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Warning threshold for `dt · max_node Σ_k ‖Λ^k row‖₁²`.
    pub c_stab: f64,
    /// One-step max-norm growth treated as a blow-up.
    pub growth_limit: f64,
    /// Keep every `stride`-th state.
    pub stride: usize,
    /// Zero negative values after each step and rescale to the pre-clip sum.
    pub clip: bool,
    pub memory_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::Imex,
            tolerance: 1e-10,
            max_iterations: 1000,
            c_stab: 0.5,
            growth_limit: 1e3,
            stride: 1,
            clip: false,
            memory_budget: 2 << 30,
        }
    }
}
