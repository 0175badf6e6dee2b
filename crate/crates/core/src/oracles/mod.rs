//! Reference filters: Kalman–Bucy for linear-Gaussian systems (correlated
//! noise allowed) and a bootstrap particle filter for nonlinear systems
//! with independent signal and observation noise.

mod kalman;
mod particle;

use thiserror::Error;

pub use kalman::{kalman_bucy_solve, KalmanOutput, LinearGaussianSpec};
pub use particle::{
    particle_filter_solve, systematic_resample, ParticleEnsemble, ParticleOptions, ParticleOutput,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance norm {norm:e} exceeded the blow-up bound at t = {t}")]
    CovarianceBlowup { t: f64, norm: f64 },
    #[error("ΘΘ* is not invertible")]
    SingularObservationNoise,
    #[error("signal and observation noise are correlated (|θΘ*| = {cross:e} at t = {t})")]
    CorrelatedNoiseUnsupported { t: f64, cross: f64 },
    #[error("log-weights overflowed at t = {t}")]
    WeightDegeneracy { t: f64 },
    #[error("step {dt} is not a multiple of the path step {path_dt}")]
    StepMismatch { dt: f64, path_dt: f64 },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// `paths` resampled to step `dt` (an integer multiple of its own step).
pub(crate) fn thin_to(
    paths: &crate::sde_sim::PathBundle,
    dt: f64,
) -> Result<std::borrow::Cow<'_, crate::sde_sim::PathBundle>, OracleError> {
    let ratio = dt / paths.dt;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(OracleError::StepMismatch {
            dt,
            path_dt: paths.dt,
        });
    }
    Ok(if factor > 1.0 {
        std::borrow::Cow::Owned(paths.thinned(factor as usize))
    } else {
        std::borrow::Cow::Borrowed(paths)
    })
}
