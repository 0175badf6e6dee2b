//! Built-in coefficient families addressable from scenario files.

use serde::{Deserialize, Serialize};

use super::{Derivative, DivergenceFormSpec, ModelError, SystemSpec};
use crate::linalg::mul;

/// `b = F x + f₀`, `B = H x`, constant `θ` and `Θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineParams {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    /// d × d, row-major.
    pub f: Vec<f64>,
    #[serde(default)]
    pub offset: Vec<f64>,
    /// k × d.
    pub h: Vec<f64>,
    /// d × m.
    pub theta: Vec<f64>,
    /// k × m.
    pub obs_theta: Vec<f64>,
    pub bound: f64,
    pub delta: f64,
}

fn check_len(name: &str, v: &[f64], len: usize) -> Result<(), ModelError> {
    if v.len() != len {
        return Err(ModelError::Dimension(format!(
            "{name} has {} entries, expected {len}",
            v.len()
        )));
    }
    Ok(())
}

pub fn affine(p: &AffineParams) -> Result<SystemSpec, ModelError> {
    let (d, k, m) = (p.d, p.k, p.m);
    check_len("f", &p.f, d * d)?;
    check_len("h", &p.h, k * d)?;
    check_len("theta", &p.theta, d * m)?;
    check_len("obs_theta", &p.obs_theta, k * m)?;
    let offset = if p.offset.is_empty() {
        vec![0.0; d]
    } else {
        check_len("offset", &p.offset, d)?;
        p.offset.clone()
    };
    let (f, h, theta, obs) = (
        p.f.clone(),
        p.h.clone(),
        p.theta.clone(),
        p.obs_theta.clone(),
    );
    Ok(SystemSpec::new(
        d,
        d + k,
        m,
        p.bound,
        p.delta,
        move |_, z, out| {
            mul(&f, &z[..d], d, d, 1, out);
            for (o, c) in out.iter_mut().zip(&offset) {
                *o += c;
            }
        },
        move |_, _, out| out.copy_from_slice(&theta),
        move |_, z, out| mul(&h, &z[..d], k, d, 1, out),
        move |_, _, out| out.copy_from_slice(&obs),
    )?
    .with_signal_diffusion_dx(Derivative::Zero)
    .autonomous(true))
}

/// Componentwise nonlinear system with disjoint noise (`d = k`, `m = 2d`):
///
/// ```text
/// b_i = offset - rate x_i + amp sin(freq x_i)
/// B_i = gain x_i + obs_amp sin(obs_freq x_i)
/// θ = [signal_sd I | 0],  Θ = [0 | obs_sd I]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigonometricParams {
    pub d: usize,
    pub offset: f64,
    pub rate: f64,
    pub amp: f64,
    pub freq: f64,
    pub gain: f64,
    pub obs_amp: f64,
    pub obs_freq: f64,
    pub signal_sd: f64,
    pub obs_sd: f64,
    pub bound: f64,
    pub delta: f64,
}

pub fn trigonometric(p: &TrigonometricParams) -> Result<SystemSpec, ModelError> {
    let d = p.d;
    let m = 2 * d;
    let q = p.clone();
    let q2 = p.clone();
    let (ssd, osd) = (p.signal_sd, p.obs_sd);
    Ok(SystemSpec::new(
        d,
        2 * d,
        m,
        p.bound,
        p.delta,
        move |_, z, out| {
            for i in 0..d {
                out[i] = q.offset - q.rate * z[i] + q.amp * (q.freq * z[i]).sin();
            }
        },
        move |_, _, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * m + i] = ssd;
            }
        },
        move |_, z, out| {
            for i in 0..d {
                out[i] = q2.gain * z[i] + q2.obs_amp * (q2.obs_freq * z[i]).sin();
            }
        },
        move |_, _, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                out[i * m + d + i] = osd;
            }
        },
    )?
    .with_signal_diffusion_dx(Derivative::Zero)
    .autonomous(true))
}

/// One-dimensional divergence-form equation with a Lipschitz kink,
/// `a(x) = base + slope |x|`, and constant noise coefficients on one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinkParams {
    pub base: f64,
    pub slope: f64,
    #[serde(default)]
    pub convection: f64,
    pub noise_gradient: f64,
    pub noise_reaction: f64,
    pub bound: f64,
    pub delta: f64,
}

pub fn kink(p: &KinkParams) -> DivergenceFormSpec {
    let (base, slope, conv, s, nu) = (
        p.base,
        p.slope,
        p.convection,
        p.noise_gradient,
        p.noise_reaction,
    );
    let mut spec =
        DivergenceFormSpec::new(1, 1, move |_, x, out| out[0] = base + slope * x[0].abs())
            .autonomous(true)
            .with_constants(p.bound, p.delta);
    if conv != 0.0 {
        spec = spec.with_convection(move |_, x, out| out[0] = conv * x[0]);
    }
    if s != 0.0 {
        spec = spec.with_noise_gradient(move |_, _, out| out[0] = s);
    }
    if nu != 0.0 {
        spec = spec.with_noise_reaction(move |_, _, out| out[0] = nu);
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_rejects_bad_shapes() {
        let p = AffineParams {
            d: 1,
            k: 1,
            m: 2,
            f: vec![-1.0],
            offset: vec![],
            h: vec![1.0],
            theta: vec![1.0],
            obs_theta: vec![0.0, 1.0],
            bound: 10.0,
            delta: 0.3,
        };
        assert!(matches!(affine(&p), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn trigonometric_layout() {
        let p = TrigonometricParams {
            d: 1,
            offset: 1.0,
            rate: 0.5,
            amp: 0.5,
            freq: 2.0,
            gain: 1.0,
            obs_amp: 0.5,
            obs_freq: 1.0,
            signal_sd: 0.8,
            obs_sd: 0.6,
            bound: 10.0,
            delta: 0.1,
        };
        let s = trigonometric(&p).unwrap();
        let mut th = [9.0; 2];
        let mut ob = [9.0; 2];
        s.signal_diffusion(0.0, &[0.3], &[0.0], &mut th);
        s.obs_diffusion(0.0, &[0.0], &mut ob);
        assert_eq!(th, [0.8, 0.0]);
        assert_eq!(ob, [0.0, 0.6]);
    }
}
