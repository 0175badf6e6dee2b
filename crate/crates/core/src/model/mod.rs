//! Problem specifications, the filtering coefficients derived from them,
//! assumption validation and oscillation diagnostics.

mod coefficients;
mod divergence;
pub mod families;
mod initial;
mod system;
mod validate;
mod vmo;

pub use coefficients::{
    assemble_filter_coefficients, assemble_filter_coefficients_with_floor, inv_sqrt,
    to_divergence_form, DivergenceOptions, FilterCoefficients, DEFAULT_EIGEN_FLOOR,
};
pub use divergence::DivergenceFormSpec;
pub use initial::InitialLaw;
pub use system::{Derivative, PartialFn, ScalarFn, StateFn, SystemSpec};
pub use validate::{
    checks, validate_assumptions, AssumptionCheck, AssumptionReport, OscillationCheck,
    OscillationValue, SamplePlan, ValidationTarget,
};
pub use vmo::{vmo_osc, vmo_osc_sup, VmoQuadrature};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix is near singular: smallest eigenvalue {min_eigenvalue:e} <= floor {floor:e}")]
    NearSingular { min_eigenvalue: f64, floor: f64 },
    #[error("ellipticity margin {margin:e} below delta/2 at t = {t}, x = {x:?}")]
    EllipticityLost { t: f64, x: Vec<f64>, margin: f64 },
    #[error("oscillation radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("{what} is not finite at t = {t}, point {point:?}")]
    NonFinite {
        what: &'static str,
        t: f64,
        point: Vec<f64>,
    },
}
