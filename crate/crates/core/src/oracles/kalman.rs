use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{thin_to, OracleError};
use crate::model::families::{affine, AffineParams};
use crate::model::{ModelError, SystemSpec};
use crate::sde_sim::PathBundle;

const BLOWUP: f64 = 1e6;

/// `dx = F x dt + θ dw`, `dy = H x dt + Θ dw`, `x_0 ~ N(m0, P0)`; matrices
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGaussianSpec {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub theta: Vec<f64>,
    pub obs_theta: Vec<f64>,
    pub m0: Vec<f64>,
    pub p0: Vec<f64>,
}

/// Conditional mean and covariance at every step of the filter grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KalmanOutput {
    pub dt: f64,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    /// Steps where a negative eigenvalue of `P` was floored at zero.
    pub floored_steps: usize,
}

impl KalmanOutput {
    pub fn variance(&self, i: usize) -> Vec<f64> {
        let d = self.mean[0].len();
        self.covariance.iter().map(|c| c[i * d + i]).collect()
    }
}

impl LinearGaussianSpec {
    pub fn validate(&self) -> Result<(), OracleError> {
        let (d, k, m) = (self.d, self.k, self.m);
        for (name, v, len) in [
            ("F", &self.f, d * d),
            ("H", &self.h, k * d),
            ("theta", &self.theta, d * m),
            ("Theta", &self.obs_theta, k * m),
            ("m0", &self.m0, d),
            ("P0", &self.p0, d * d),
        ] {
            if v.len() != len {
                return Err(OracleError::DimensionMismatch(format!(
                    "{name} has {} entries, expected {len}",
                    v.len()
                )));
            }
        }
        let p0 = DMatrix::from_row_slice(d, d, &self.p0);
        if (&p0 - p0.transpose()).amax() > 1e-12 * p0.amax().max(1.0) {
            return Err(OracleError::DimensionMismatch("P0 is not symmetric".into()));
        }
        if SymmetricEigen::new(p0).eigenvalues.min() < -1e-12 {
            return Err(OracleError::DimensionMismatch(
                "P0 is not positive semidefinite".into(),
            ));
        }
        let obs = DMatrix::from_row_slice(k, m, &self.obs_theta);
        if (&obs * obs.transpose()).try_inverse().is_none() {
            return Err(OracleError::SingularObservationNoise);
        }
        Ok(())
    }

    /// The same model as a [`SystemSpec`].
    pub fn system(&self, bound: f64, delta: f64) -> Result<SystemSpec, ModelError> {
        affine(&AffineParams {
            d: self.d,
            k: self.k,
            m: self.m,
            f: self.f.clone(),
            offset: Vec::new(),
            h: self.h.clone(),
            theta: self.theta.clone(),
            obs_theta: self.obs_theta.clone(),
            bound,
            delta,
        })
    }
}

struct Model {
    f: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    cross: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl Model {
    fn gain(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        (p * self.h.transpose() + &self.cross) * &self.r_inv
    }

    fn riccati(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let g = self.gain(p);
        &self.f * p + p * self.f.transpose() + &self.q - &g * &self.r * g.transpose()
    }
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let t = p.transpose();
    *p = (&*p + t) * 0.5;
}

/// Floors negative eigenvalues at zero; reports whether anything changed.
fn floor_psd(p: &mut DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(p.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return false;
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    *p = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    true
}

/// Kalman–Bucy filter on the step grid `dt`: covariance by Heun's method,
/// mean by Euler with the observation increments.
pub fn kalman_bucy_solve(
    lg: &LinearGaussianSpec,
    paths: &PathBundle,
    dt: f64,
) -> Result<KalmanOutput, OracleError> {
    lg.validate()?;
    if paths.d != lg.d || paths.k != lg.k {
        return Err(OracleError::DimensionMismatch(format!(
            "paths have d = {}, k = {}; model has d = {}, k = {}",
            paths.d, paths.k, lg.d, lg.k
        )));
    }
    let paths = thin_to(paths, dt)?;
    let (d, k, m) = (lg.d, lg.k, lg.m);
    let theta = DMatrix::from_row_slice(d, m, &lg.theta);
    let obs = DMatrix::from_row_slice(k, m, &lg.obs_theta);
    let r = &obs * obs.transpose();
    let model = Model {
        f: DMatrix::from_row_slice(d, d, &lg.f),
        h: DMatrix::from_row_slice(k, d, &lg.h),
        q: &theta * theta.transpose(),
        cross: &theta * obs.transpose(),
        r_inv: r
            .clone()
            .try_inverse()
            .ok_or(OracleError::SingularObservationNoise)?,
        r,
    };
    let dt = paths.dt;
    let steps = paths.steps();
    let mut mean = DVector::from_column_slice(&lg.m0);
    let mut p = DMatrix::from_row_slice(d, d, &lg.p0);
    let mut out = KalmanOutput {
        dt,
        times: Vec::with_capacity(steps + 1),
        mean: Vec::with_capacity(steps + 1),
        covariance: Vec::with_capacity(steps + 1),
        floored_steps: 0,
    };
    let push = |out: &mut KalmanOutput, t: f64, mean: &DVector<f64>, p: &DMatrix<f64>| {
        out.times.push(t);
        out.mean.push(mean.iter().cloned().collect());
        out.covariance.push(p.transpose().iter().cloned().collect());
    };
    push(&mut out, 0.0, &mean, &p);
    for n in 0..steps {
        let t = n as f64 * dt;
        let g = model.gain(&p);
        let dy = DVector::from_vec(paths.dy_at(n));
        let innovation = dy - &model.h * &mean * dt;
        mean = &mean + &model.f * &mean * dt + g * innovation;

        let k1 = model.riccati(&p);
        let mut predictor = &p + &k1 * dt;
        symmetrize(&mut predictor);
        let k2 = model.riccati(&predictor);
        p = &p + (k1 + k2) * (0.5 * dt);
        symmetrize(&mut p);
        if floor_psd(&mut p) {
            out.floored_steps += 1;
            log::warn!(
                "Kalman covariance lost positive semidefiniteness at t = {}",
                t + dt
            );
        }
        let norm = p.norm();
        if !(norm <= BLOWUP) {
            return Err(OracleError::CovarianceBlowup { t: t + dt, norm });
        }
        push(&mut out, t + dt, &mean, &p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Increments;
    use crate::sde_sim::euler_maruyama;

    fn scalar(f: f64, h: f64, theta: [f64; 2], p0: f64) -> LinearGaussianSpec {
        LinearGaussianSpec {
            d: 1,
            k: 1,
            m: 2,
            f: vec![f],
            h: vec![h],
            theta: theta.to_vec(),
            obs_theta: vec![0.0, 1.0],
            m0: vec![0.0],
            p0: vec![p0],
        }
    }

    fn quiet_paths(lg: &LinearGaussianSpec, steps: usize, dt: f64) -> PathBundle {
        let sys = lg.system(10.0, 0.1).unwrap();
        euler_maruyama(&sys, &[0.0], &[0.0], &Increments::zeros(2, steps, dt), 0).unwrap()
    }

    #[test]
    fn no_information_gives_lyapunov_limit() {
        let lg = scalar(-1.0, 0.0, [1.0, 0.0], 2.0);
        let paths = quiet_paths(&lg, 5000, 1e-3);
        let out = kalman_bucy_solve(&lg, &paths, 1e-3).unwrap();
        let p_t = out.covariance.last().unwrap()[0];
        // exact: P(t) = ½ + (P0 - ½) e^{-2t}
        let exact = 0.5 + 1.5 * (-10.0f64).exp();
        assert!((p_t - exact).abs() < 1e-4, "{p_t}");
        assert!((p_t - 0.5).abs() < 1e-4);
    }

    #[test]
    fn static_signal_riccati_closed_form() {
        let lg = scalar(0.0, 1.0, [0.0, 0.0], 0.8);
        let paths = quiet_paths(&lg, 1000, 1e-3);
        let out = kalman_bucy_solve(&lg, &paths, 1e-3).unwrap();
        let exact = 0.8 / (1.0 + 0.8);
        assert!((out.covariance[1000][0] - exact).abs() < 1e-6);
    }

    #[test]
    fn validation_and_blowup() {
        let mut lg = scalar(-1.0, 1.0, [1.0, 0.0], 1.0);
        lg.obs_theta = vec![0.0, 0.0];
        assert!(matches!(
            lg.validate(),
            Err(OracleError::SingularObservationNoise)
        ));
        let lg = scalar(-1.0, 1.0, [1.0, 0.0], 1.0);
        let mut paths = quiet_paths(&lg, 10, 0.1);
        paths.k = 2;
        assert!(matches!(
            kalman_bucy_solve(&lg, &paths, 0.1),
            Err(OracleError::DimensionMismatch(_))
        ));
        let unstable = scalar(20.0, 0.0, [10.0, 0.0], 1.0);
        let paths = quiet_paths(&scalar(-1.0, 0.0, [1.0, 0.0], 1.0), 1000, 1e-2);
        assert!(matches!(
            kalman_bucy_solve(&unstable, &paths, 1e-2),
            Err(OracleError::CovarianceBlowup { .. })
        ));
    }

    #[test]
    fn correlated_scalar_matches_hand_recursion() {
        // P' = 2fP + q - (hP + c)² / r with c = θ·Θ, r = |Θ|²
        let lg = LinearGaussianSpec {
            obs_theta: vec![0.3, 0.8],
            m0: vec![0.5],
            ..scalar(-0.7, 1.3, [1.0, 0.5], 0.4)
        };
        let sys = lg.system(10.0, 0.1).unwrap();
        let steps = 2000;
        let dt = 5e-4;
        let inc = Increments::brownian(
            2,
            steps,
            dt,
            crate::rng::StreamKey::new(3, crate::rng::Domain::Wiener, 0),
        );
        let paths = euler_maruyama(&sys, &[0.5], &[0.0], &inc, 3).unwrap();
        let out = kalman_bucy_solve(&lg, &paths, dt).unwrap();
        let (f, h, q, c, r) = (-0.7, 1.3, 1.25, 0.3 + 0.5 * 0.8, 0.09 + 0.64);
        let rhs = |p: f64| 2.0 * f * p + q - (h * p + c).powi(2) / r;
        let (mut p, mut m) = (0.4f64, 0.5f64);
        for n in 0..steps {
            let dy = paths.y_at(n + 1)[0] - paths.y_at(n)[0];
            m += f * m * dt + (h * p + c) / r * (dy - h * m * dt);
            let k1 = rhs(p);
            let k2 = rhs(p + dt * k1);
            p += 0.5 * dt * (k1 + k2);
            assert!(
                (out.covariance[n + 1][0] - p).abs() < 1e-12,
                "{n}: {} vs {p}",
                out.covariance[n + 1][0]
            );
            assert!((out.mean[n + 1][0] - m).abs() < 1e-10);
        }
        assert_eq!(out.floored_steps, 0);
    }

    #[test]
    fn extra_observation_channel_does_not_increase_uncertainty() {
        let one = LinearGaussianSpec {
            d: 2,
            k: 1,
            m: 3,
            f: vec![-0.5, 1.0, -1.0, -0.5],
            h: vec![1.0, 0.0],
            theta: vec![1.0, 0.0, 0.0, 0.0, 0.7, 0.0],
            obs_theta: vec![0.0, 0.0, 1.0],
            m0: vec![0.0, 0.0],
            p0: vec![1.0, 0.2, 0.2, 0.5],
        };
        let two = LinearGaussianSpec {
            k: 2,
            m: 4,
            h: vec![1.0, 0.0, 0.0, 1.0],
            theta: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0],
            obs_theta: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0],
            ..one.clone()
        };
        let quiet = |lg: &LinearGaussianSpec| {
            let sys = lg.system(10.0, 0.1).unwrap();
            euler_maruyama(
                &sys,
                &[0.0, 0.0],
                &vec![0.0; lg.k],
                &Increments::zeros(lg.m, 2000, 1e-3),
                0,
            )
            .unwrap()
        };
        let a = kalman_bucy_solve(&one, &quiet(&one), 1e-3).unwrap();
        let b = kalman_bucy_solve(&two, &quiet(&two), 1e-3).unwrap();
        for (pa, pb) in a.covariance.iter().zip(&b.covariance).skip(1) {
            assert!(pb[0] + pb[3] <= pa[0] + pa[3] + 1e-12);
        }
    }
}
