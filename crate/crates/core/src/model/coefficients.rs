use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use super::divergence::DivergenceFormSpec;
use super::system::{buf, SystemSpec};
use super::ModelError;
use crate::linalg::{mul, mul_transpose, sym_eig_extremes, to_row_major};

/// Default eigenvalue floor for [`inv_sqrt`].
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-12;

/// `M^{-1/2}` of a symmetric positive definite matrix.
pub fn inv_sqrt(m: &DMatrix<f64>, eigen_floor: f64) -> Result<DMatrix<f64>, ModelError> {
    if !m.is_square() {
        return Err(ModelError::Dimension(format!(
            "inv_sqrt needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.norm().max(1.0);
    let asymmetry = (m - m.transpose()).norm();
    if asymmetry > 1e-12 * scale {
        return Err(ModelError::NonSymmetric { asymmetry });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min > eigen_floor) {
        return Err(ModelError::NearSingular {
            min_eigenvalue: min,
            floor: eigen_floor,
        });
    }
    let inv_root = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&inv_root) * v.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// The filtering coefficients frozen at one `(t, y_t)`:
///
/// ```text
/// Ψ = (ΘΘ*)^{-1/2},  a = ½θθ*,  σ = θΘ*Ψ,  β = ΨB
/// ```
///
/// as functions of the signal state x.
#[derive(Clone, Debug)]
pub struct FilterCoefficients {
    spec: SystemSpec,
    t: f64,
    y: Vec<f64>,
    psi: Vec<f64>,
    obs_diffusion: Vec<f64>,
    /// `Θ*Ψ`, m × k.
    theta_star_psi: Vec<f64>,
}

/// Evaluates `Ψ_t` and freezes the observation point.
pub fn assemble_filter_coefficients(
    spec: &SystemSpec,
    t: f64,
    y: &[f64],
) -> Result<FilterCoefficients, ModelError> {
    assemble_filter_coefficients_with_floor(spec, t, y, DEFAULT_EIGEN_FLOOR)
}

pub fn assemble_filter_coefficients_with_floor(
    spec: &SystemSpec,
    t: f64,
    y: &[f64],
    eigen_floor: f64,
) -> Result<FilterCoefficients, ModelError> {
    let (k, m) = (spec.k(), spec.m());
    if y.len() != k {
        return Err(ModelError::Dimension(format!(
            "observation point has length {}, expected {k}",
            y.len()
        )));
    }
    let mut obs = vec![0.0; k * m];
    spec.obs_diffusion(t, y, &mut obs);
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite {
            what: "obs_diffusion",
            t,
            point: y.to_vec(),
        });
    }
    let mut gram = vec![0.0; k * k];
    mul_transpose(&obs, &obs, k, m, k, &mut gram);
    let psi = if k == 1 {
        if !(gram[0] > eigen_floor) {
            return Err(ModelError::NearSingular {
                min_eigenvalue: gram[0],
                floor: eigen_floor,
            });
        }
        vec![1.0 / gram[0].sqrt()]
    } else {
        to_row_major(&inv_sqrt(
            &DMatrix::from_row_slice(k, k, &gram),
            eigen_floor,
        )?)
    };
    // Θ*Ψ: (m × k) = Θᵀ (m × k) · Ψ (k × k)
    let mut theta_star_psi = vec![0.0; m * k];
    for r in 0..m {
        for c in 0..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += obs[l * m + r] * psi[l * k + c];
            }
            theta_star_psi[r * k + c] = acc;
        }
    }
    Ok(FilterCoefficients {
        spec: spec.clone(),
        t,
        y: y.to_vec(),
        psi,
        obs_diffusion: obs,
        theta_star_psi,
    })
}

impl FilterCoefficients {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    /// `Ψ_t`, row-major k × k.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// `Θ_t`, row-major k × m.
    pub fn obs_diffusion(&self) -> &[f64] {
        &self.obs_diffusion
    }

    /// `Ψ_t v` for an observation-space vector (e.g. an increment `Δy`).
    pub fn psi_apply(&self, v: &[f64], out: &mut [f64]) {
        let k = self.spec.k();
        mul(&self.psi, v, k, k, 1, out);
    }

    pub fn theta(&self, x: &[f64], out: &mut [f64]) {
        self.spec.signal_diffusion(self.t, x, &self.y, out);
    }

    /// `a_t(x) = ½θθ*`, d × d.
    pub fn a(&self, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.spec.d(), self.spec.m());
        let mut th = buf(d * m);
        self.theta(x, &mut th);
        half_gram(&th, d, m, out);
    }

    /// `b_t(x)`, length d.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.spec.drift(self.t, x, &self.y, out);
    }

    /// `σ_t(x) = θΘ*Ψ`, d × k.
    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.spec.d(), self.spec.m());
        let mut th = buf(d * m);
        self.theta(x, &mut th);
        mul(&th, &self.theta_star_psi, d, m, self.spec.k(), out);
    }

    /// `β_t(x) = ΨB`, length k.
    pub fn beta(&self, x: &[f64], out: &mut [f64]) {
        let k = self.spec.k();
        let mut b = buf(k);
        self.spec.obs_drift(self.t, x, &self.y, &mut b);
        mul(&self.psi, &b, k, k, 1, out);
    }

    /// `D_i a` into `out`, either from the spec's derivative or by a
    /// centered difference with spacing `h`.
    pub fn a_partial(&self, x: &[f64], i: usize, h: f64, out: &mut [f64]) {
        let (d, m) = (self.spec.d(), self.spec.m());
        let mut th = buf(d * m);
        let mut dth = buf(d * m);
        if self
            .spec
            .signal_diffusion_partial(self.t, x, &self.y, i, &mut dth)
            .is_some()
        {
            self.theta(x, &mut th);
            // D(½θθ*) = ½(Dθ θ* + θ Dθ*)
            for r in 0..d {
                for c in 0..d {
                    let mut acc = 0.0;
                    for l in 0..m {
                        acc += dth[r * m + l] * th[c * m + l] + th[r * m + l] * dth[c * m + l];
                    }
                    out[r * d + c] = 0.5 * acc;
                }
            }
        } else {
            let mut lo = buf(d * d);
            let mut xp = buf(d);
            xp.copy_from_slice(x);
            xp[i] = x[i] + h;
            self.a(&xp, out);
            xp[i] = x[i] - h;
            self.a(&xp, &mut lo);
            for (o, l) in out.iter_mut().zip(lo.iter()) {
                *o = (*o - l) / (2.0 * h);
            }
        }
    }

    /// `D_i σ` into `out` (d × k).
    pub fn sigma_partial(&self, x: &[f64], i: usize, h: f64, out: &mut [f64]) {
        let (d, m, k) = (self.spec.d(), self.spec.m(), self.spec.k());
        let mut dth = buf(d * m);
        if self
            .spec
            .signal_diffusion_partial(self.t, x, &self.y, i, &mut dth)
            .is_some()
        {
            mul(&dth, &self.theta_star_psi, d, m, k, out);
        } else {
            let mut lo = buf(d * k);
            let mut xp = buf(d);
            xp.copy_from_slice(x);
            xp[i] = x[i] + h;
            self.sigma(&xp, out);
            xp[i] = x[i] - h;
            self.sigma(&xp, &mut lo);
            for (o, l) in out.iter_mut().zip(lo.iter()) {
                *o = (*o - l) / (2.0 * h);
            }
        }
    }

    /// Smallest eigenvalue of `a - ½σσ*` at x.
    pub fn parabolicity(&self, x: &[f64]) -> f64 {
        let (d, k) = (self.spec.d(), self.spec.k());
        let mut a = buf(d * d);
        let mut s = buf(d * k);
        let mut alpha = buf(d * d);
        self.a(x, &mut a);
        self.sigma(x, &mut s);
        half_gram(&s, d, k, &mut alpha);
        for (v, al) in a.iter_mut().zip(alpha.iter()) {
            *v -= al;
        }
        sym_eig_extremes(&a, d).0
    }

    fn derivatives_vanish(&self) -> bool {
        matches!(self.spec.signal_diffusion_dx(), super::Derivative::Zero)
    }
}

pub(crate) fn half_gram(s: &[f64], r: usize, c: usize, out: &mut [f64]) {
    mul_transpose(s, s, r, c, r, out);
    out.iter_mut().for_each(|v| *v *= 0.5);
}

/// Options for [`to_divergence_form`].
#[derive(Clone, Debug)]
pub struct DivergenceOptions {
    /// Finite-difference spacing for coefficient derivatives.
    pub derivative_step: f64,
    /// Points where `a - α̃ ≥ δ/2` is verified.
    pub check_points: Vec<Vec<f64>>,
}

/// Rewrites the Zakai operators `L*` and `Λ^{k*}` as divergence-form data:
///
/// ```text
/// a^{ij} = a^{ij},  a^j = D_i a^{ij} - b^j,  b = 0,  c = 0
/// σ̃^{ik} = -σ^{ik},  ν^k = β^k - D_i σ^{ik}
/// ```
pub fn to_divergence_form(
    fc: &FilterCoefficients,
    opts: &DivergenceOptions,
) -> Result<DivergenceFormSpec, ModelError> {
    let spec = fc.spec();
    let (d, k) = (spec.d(), spec.k());
    let half_delta = 0.5 * spec.delta;
    for x in &opts.check_points {
        let margin = fc.parabolicity(x) - half_delta;
        if margin < -1e-12 {
            return Err(ModelError::EllipticityLost {
                t: fc.t(),
                x: x.clone(),
                margin,
            });
        }
    }

    let shared = Arc::new(fc.clone());
    let h = opts.derivative_step;
    let zero_derivs = fc.derivatives_vanish();

    let f = shared.clone();
    let diffusion = move |_t: f64, x: &[f64], out: &mut [f64]| f.a(x, out);

    let f = shared.clone();
    let convection = move |_t: f64, x: &[f64], out: &mut [f64]| {
        f.drift(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
        if zero_derivs {
            return;
        }
        let mut da = buf(d * d);
        for i in 0..d {
            f.a_partial(x, i, h, &mut da);
            for j in 0..d {
                out[j] += da[i * d + j];
            }
        }
    };

    let f = shared.clone();
    let noise_gradient = move |_t: f64, x: &[f64], out: &mut [f64]| {
        f.sigma(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    };

    let f = shared;
    let noise_reaction = move |_t: f64, x: &[f64], out: &mut [f64]| {
        f.beta(x, out);
        if zero_derivs {
            return;
        }
        let mut ds = buf(d * k);
        for i in 0..d {
            f.sigma_partial(x, i, h, &mut ds);
            for kk in 0..k {
                out[kk] -= ds[i * k + kk];
            }
        }
    };

    Ok(DivergenceFormSpec::new(d, k, diffusion)
        .with_convection(convection)
        .with_noise_gradient(noise_gradient)
        .with_noise_reaction(noise_reaction)
        .with_constants(spec.bound, half_delta)
        .autonomous(true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemSpec;
    use approx::assert_relative_eq;

    fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert!(frob_rel(&inv_sqrt(&i, 1e-12).unwrap(), &i) < 1e-14);
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let s = inv_sqrt(&m, 1e-12).unwrap();
        assert_relative_eq!(s[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(s[(1, 1)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(s[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn inv_sqrt_dense_against_closed_eigendecomposition() {
        // [[2,1],[1,2]] has eigenpairs 3 ↦ (1,1)/√2 and 1 ↦ (1,-1)/√2, so
        // M^{-1/2} = ½(1/√3 + 1) I + ½(1/√3 - 1) [[0,1],[1,0]].
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let s = inv_sqrt(&m, 1e-12).unwrap();
        let p = 1.0 / 3f64.sqrt();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.5 * (p + 1.0),
                0.5 * (p - 1.0),
                0.5 * (p - 1.0),
                0.5 * (p + 1.0),
            ],
        );
        for (a, b) in s.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let id = &s * &m * &s;
        assert!(frob_rel(&id, &DMatrix::identity(2, 2)) < 1e-10);
    }

    #[test]
    fn inv_sqrt_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            inv_sqrt(&asym, 1e-12),
            Err(ModelError::NonSymmetric { .. })
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            inv_sqrt(&singular, 1e-12),
            Err(ModelError::NearSingular { .. })
        ));
    }

    fn correlated(rho: f64) -> SystemSpec {
        SystemSpec::new(
            1,
            2,
            2,
            10.0,
            0.3,
            |_, z, o| o[0] = -z[0],
            move |_, _, o| {
                o[0] = 1.0;
                o[1] = rho;
            },
            |_, z, o| o[0] = z[0],
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 1.0;
            },
        )
        .unwrap()
        .with_signal_diffusion_dx(crate::model::Derivative::Zero)
    }

    #[test]
    fn correlated_scalar_case_by_hand() {
        let rho = 0.5;
        let fc = assemble_filter_coefficients(&correlated(rho), 0.0, &[0.3]).unwrap();
        let x = [0.7];
        let mut a = [0.0];
        let mut s = [0.0];
        let mut beta = [0.0];
        fc.a(&x, &mut a);
        fc.sigma(&x, &mut s);
        fc.beta(&x, &mut beta);
        assert_relative_eq!(fc.psi()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(a[0], 0.5 * (1.0 + rho * rho), epsilon = 1e-15);
        assert_relative_eq!(s[0], rho, epsilon = 1e-15);
        assert_relative_eq!(a[0] - 0.5 * s[0] * s[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(beta[0], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn disjoint_noise_has_no_cross_term() {
        // d = 2, d1 = 3, m = 3, θ = [I_2 | 0], Θ = [0 0 1]
        let spec = SystemSpec::new(
            2,
            3,
            3,
            10.0,
            0.4,
            |_, _, o| o.iter_mut().for_each(|v| *v = 0.0),
            |_, _, o| {
                o.iter_mut().for_each(|v| *v = 0.0);
                o[0] = 1.0;
                o[4] = 1.0;
            },
            |_, _, o| o[0] = 0.0,
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 0.0;
                o[2] = 1.0;
            },
        )
        .unwrap();
        let fc = assemble_filter_coefficients(&spec, 0.0, &[1.0]).unwrap();
        let mut a = [0.0; 4];
        let mut s = [1.0; 2];
        fc.a(&[0.1, 0.2], &mut a);
        fc.sigma(&[0.1, 0.2], &mut s);
        assert_eq!(fc.psi(), &[1.0]);
        assert_eq!(a, [0.5, 0.0, 0.0, 0.5]);
        assert_eq!(s, [0.0, 0.0]);
    }

    #[test]
    fn scaled_observation_noise() {
        let spec = SystemSpec::new(
            1,
            2,
            2,
            10.0,
            0.1,
            |_, _, o| o[0] = 0.0,
            |_, _, o| {
                o[0] = 1.0;
                o[1] = 0.0;
            },
            |_, z, o| o[0] = 3.0 * z[0],
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 2.0;
            },
        )
        .unwrap();
        let fc = assemble_filter_coefficients(&spec, 0.0, &[0.0]).unwrap();
        let mut beta = [0.0];
        fc.beta(&[1.0], &mut beta);
        assert_relative_eq!(fc.psi()[0], 0.5);
        assert_relative_eq!(beta[0], 1.5);
    }

    #[test]
    fn divergence_form_of_constant_coefficients() {
        let rho = 0.5;
        let fc = assemble_filter_coefficients(&correlated(rho), 0.0, &[0.0]).unwrap();
        let opts = DivergenceOptions {
            derivative_step: 1e-3,
            check_points: vec![vec![-1.0], vec![0.0], vec![2.0]],
        };
        let div = to_divergence_form(&fc, &opts).unwrap();
        let x = [0.8];
        let mut aj = [0.0];
        let mut nu = [0.0];
        let mut sig = [0.0];
        let mut alpha = [0.0];
        div.convection.as_ref().unwrap()(0.0, &x, &mut aj);
        div.noise_reaction.as_ref().unwrap()(0.0, &x, &mut nu);
        div.noise_gradient.as_ref().unwrap()(0.0, &x, &mut sig);
        div.noise_correction(0.0, &x, &mut alpha);
        // a^1 = -b = x, ν = β = x, σ̃ = -ρ, α̃ = ½ρ²
        assert_relative_eq!(aj[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(nu[0], 0.8, epsilon = 1e-15);
        assert_relative_eq!(sig[0], -rho, epsilon = 1e-15);
        assert_relative_eq!(alpha[0], 0.125, epsilon = 1e-15);
        let mut a = [0.0];
        (div.diffusion)(0.0, &x, &mut a);
        assert_relative_eq!(a[0] - alpha[0], 0.5, epsilon = 1e-15);
        // finite differences of constant fields are exactly zero too
        let fd =
            correlated(rho).with_signal_diffusion_dx(crate::model::Derivative::FiniteDifference);
        let fc = assemble_filter_coefficients(&fd, 0.0, &[0.0]).unwrap();
        let div = to_divergence_form(&fc, &opts).unwrap();
        div.convection.as_ref().unwrap()(0.0, &x, &mut aj);
        assert_eq!(aj[0], 0.8);
    }

    #[test]
    fn fokker_planck_limit_has_no_noise_terms() {
        // θ(x) = sqrt(2 + sin x), B = 0, b = 0: ν ≡ 0, σ̃ ≡ 0, a^1 = D a
        let spec = SystemSpec::new(
            1,
            2,
            2,
            10.0,
            0.1,
            |_, _, o| o[0] = 0.0,
            |_, z, o| {
                o[0] = (2.0 + z[0].sin()).sqrt();
                o[1] = 0.0;
            },
            |_, _, o| o[0] = 0.0,
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 1.0;
            },
        )
        .unwrap();
        let fc = assemble_filter_coefficients(&spec, 0.0, &[0.0]).unwrap();
        let opts = DivergenceOptions {
            derivative_step: 1e-4,
            check_points: vec![vec![0.0]],
        };
        let div = to_divergence_form(&fc, &opts).unwrap();
        let x = [0.4];
        let mut aj = [0.0];
        let mut nu = [0.0];
        let mut sig = [0.0];
        div.convection.as_ref().unwrap()(0.0, &x, &mut aj);
        div.noise_reaction.as_ref().unwrap()(0.0, &x, &mut nu);
        div.noise_gradient.as_ref().unwrap()(0.0, &x, &mut sig);
        assert_relative_eq!(aj[0], 0.5 * 0.4f64.cos(), epsilon = 1e-8);
        assert_eq!(nu[0], 0.0);
        assert_eq!(sig[0], 0.0);
    }

    #[test]
    fn ellipticity_loss_is_reported() {
        // θ = Θ: the whole signal noise is seen by the observation.
        let spec = SystemSpec::new(
            1,
            2,
            1,
            10.0,
            0.2,
            |_, _, o| o[0] = 0.0,
            |_, _, o| o[0] = 1.0,
            |_, _, o| o[0] = 0.0,
            |_, _, o| o[0] = 1.0,
        )
        .unwrap();
        let fc = assemble_filter_coefficients(&spec, 0.0, &[0.0]).unwrap();
        let opts = DivergenceOptions {
            derivative_step: 1e-3,
            check_points: vec![vec![0.0]],
        };
        assert!(matches!(
            to_divergence_form(&fc, &opts),
            Err(ModelError::EllipticityLost { .. })
        ));
    }
}
