use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thin_to, OracleError};
use crate::linalg::{exact_sum, mul_transpose};
use crate::model::{assemble_filter_coefficients, InitialLaw, SystemSpec};
use crate::rng::{Domain, StreamKey};
use crate::sde_sim::PathBundle;

/// Particles drawing from the same generator window.
const BLOCK: usize = 1024;
const CROSS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleOptions {
    pub particles: usize,
    /// Resample when `ESS < threshold · N`.
    pub threshold: f64,
    pub seed: u64,
    pub replica: u64,
    /// Record moments every `moment_stride` steps (and at the end).
    pub moment_stride: usize,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        Self {
            particles: 10_000,
            threshold: 0.5,
            seed: 0,
            replica: 0,
            moment_stride: 1,
        }
    }
}

/// Weighted particle cloud; `particles` is particle-major `N × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub d: usize,
    pub particles: Vec<f64>,
    pub weights: Vec<f64>,
    pub ess: f64,
}

impl ParticleEnsemble {
    pub fn uniform(d: usize, particles: Vec<f64>) -> Self {
        let n = particles.len() / d;
        Self {
            d,
            particles,
            weights: vec![1.0 / n as f64; n],
            ess: n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Normalizes `exp(log_w - max)`; sums are exact, so the result does not
    /// depend on particle order.
    pub fn set_log_weights(&mut self, log_w: &[f64]) -> Option<()> {
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total = exact_sum(w.iter().cloned());
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        self.weights = w.iter().map(|v| v / total).collect();
        let sq = exact_sum(self.weights.iter().map(|v| v * v));
        self.ess = (1.0 / sq).clamp(1.0, self.len() as f64);
        Some(())
    }

    /// Weighted mean and covariance (row-major).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mean: Vec<f64> = (0..d)
            .map(|i| {
                exact_sum(
                    self.weights
                        .iter()
                        .enumerate()
                        .map(|(p, w)| w * self.particles[p * d + i]),
                )
            })
            .collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let c = exact_sum(self.weights.iter().enumerate().map(|(p, w)| {
                    w * (self.particles[p * d + i] - mean[i])
                        * (self.particles[p * d + j] - mean[j])
                }));
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        (mean, cov)
    }
}

/// Systematic resampling with offset `u ∈ [0, 1)`: returns the source index
/// of every new particle.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..n {
        let target = (j as f64 + u) / n as f64;
        while i + 1 < n && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleOutput {
    pub dt: f64,
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub resamples: usize,
    #[serde(skip)]
    pub ensemble: Option<ParticleEnsemble>,
}

impl ParticleOutput {
    pub fn variance(&self, i: usize) -> Vec<f64> {
        let d = self.mean[0].len();
        self.covariance.iter().map(|c| c[i * d + i]).collect()
    }
}

fn check_uncorrelated(spec: &SystemSpec, t: f64, xs: &[f64], y: &[f64]) -> Result<(), OracleError> {
    let (d, k, m) = (spec.d(), spec.k(), spec.m());
    let mut th = vec![0.0; d * m];
    let mut obs = vec![0.0; k * m];
    let mut cross = vec![0.0; d * k];
    spec.obs_diffusion(t, y, &mut obs);
    for x in xs.chunks(d).take(64) {
        spec.signal_diffusion(t, x, y, &mut th);
        mul_transpose(&th, &obs, d, m, k, &mut cross);
        let c = cross.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if c > CROSS_TOL {
            return Err(OracleError::CorrelatedNoiseUnsupported { t, cross: c });
        }
    }
    Ok(())
}

/// Bootstrap particle filter on the observation path of `paths`.
///
/// Each step weights by the likelihood increment at the current particle
/// positions, moves particles with fresh signal noise, records moments and
/// resamples systematically when the effective sample size drops below the
/// threshold.
pub fn particle_filter_solve(
    spec: &SystemSpec,
    x0: &InitialLaw,
    paths: &PathBundle,
    dt: f64,
    opts: &ParticleOptions,
) -> Result<ParticleOutput, OracleError> {
    let n = opts.particles;
    if n == 0 {
        return Err(OracleError::DimensionMismatch(
            "need at least one particle".into(),
        ));
    }
    if paths.d != spec.d() || paths.k != spec.k() || x0.dim() != spec.d() {
        return Err(OracleError::DimensionMismatch(
            "paths, law and system disagree".into(),
        ));
    }
    x0.validate()?;
    let paths = thin_to(paths, dt)?;
    let dt = paths.dt;
    let (d, k, m) = (spec.d(), spec.k(), spec.m());
    let blocks = n.div_ceil(BLOCK);
    let init_key = StreamKey::new(opts.seed, Domain::InitialState, opts.replica);
    let move_key = StreamKey::new(opts.seed, Domain::Particles, opts.replica);
    let resample_key = StreamKey::new(opts.seed, Domain::Resampling, opts.replica);

    let mut xs = vec![0.0; n * d];
    xs.par_chunks_mut(BLOCK * d)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut rng = init_key.at_block(1, b as u64);
            for x in chunk.chunks_mut(d) {
                x.copy_from_slice(&x0.sample(&mut rng));
            }
        });
    check_uncorrelated(spec, 0.0, &xs, paths.y_at(0))?;
    let mut ens = ParticleEnsemble::uniform(d, xs);
    let mut log_w = vec![0.0; n];
    let steps = paths.steps();
    let stride = opts.moment_stride.max(1);
    let mut out = ParticleOutput {
        dt,
        times: Vec::new(),
        mean: Vec::new(),
        covariance: Vec::new(),
        ess: Vec::new(),
        resamples: 0,
        ensemble: None,
    };
    let record = |out: &mut ParticleOutput, ens: &ParticleEnsemble, t: f64| {
        let (mean, cov) = ens.moments();
        out.times.push(t);
        out.mean.push(mean);
        out.covariance.push(cov);
        out.ess.push(ens.ess);
    };
    record(&mut out, &ens, 0.0);

    for step in 0..steps {
        let t = step as f64 * dt;
        let y = paths.y_at(step).to_vec();
        let fc = assemble_filter_coefficients(spec, t, &y)?;
        let dy = paths.dy_at(step);
        let mut dz = vec![0.0; k];
        fc.psi_apply(&dy, &mut dz);
        if !spec.is_autonomous() {
            check_uncorrelated(spec, t, &ens.particles, &y)?;
        }

        // weight with the left-point positions, then propagate
        log_w
            .par_iter_mut()
            .zip(ens.particles.par_chunks(d))
            .for_each(|(lw, x)| {
                let mut beta = vec![0.0; k];
                fc.beta(x, &mut beta);
                let mut inc = 0.0;
                let mut sq = 0.0;
                for r in 0..k {
                    inc += beta[r] * dz[r];
                    sq += beta[r] * beta[r];
                }
                *lw += inc - 0.5 * sq * dt;
            });
        let sd = dt.sqrt();
        ens.particles
            .par_chunks_mut(BLOCK * d)
            .enumerate()
            .for_each(|(b, chunk)| {
                let mut rng = move_key.at_block(step as u64, b as u64);
                let mut drift = vec![0.0; d];
                let mut th = vec![0.0; d * m];
                let mut xi = vec![0.0; m];
                for x in chunk.chunks_mut(d) {
                    spec.drift(t, x, &y, &mut drift);
                    spec.signal_diffusion(t, x, &y, &mut th);
                    for v in xi.iter_mut() {
                        *v = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    for i in 0..d {
                        let mut acc = drift[i] * dt;
                        for j in 0..m {
                            acc += th[i * m + j] * xi[j];
                        }
                        x[i] += acc;
                    }
                }
            });
        debug_assert!(blocks as u64 <= crate::rng::MAX_BLOCKS);
        ens.set_log_weights(&log_w)
            .ok_or(OracleError::WeightDegeneracy { t: t + dt })?;
        // keep log-weights bounded
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        log_w.iter_mut().for_each(|l| *l -= max);

        if (step + 1) % stride == 0 || step + 1 == steps {
            record(&mut out, &ens, t + dt);
        }
        if ens.ess < opts.threshold * n as f64 {
            let u: f64 = resample_key.at(step as u64).random();
            let idx = systematic_resample(&ens.weights, u);
            let mut next = vec![0.0; n * d];
            for (dst, src) in next.chunks_mut(d).zip(&idx) {
                dst.copy_from_slice(&ens.particles[src * d..(src + 1) * d]);
            }
            ens = ParticleEnsemble::uniform(d, next);
            log_w.iter_mut().for_each(|l| *l = 0.0);
            out.resamples += 1;
        }
    }
    out.ensemble = Some(ens);
    Ok(out)
}
