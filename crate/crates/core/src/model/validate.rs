use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coefficients::{
    assemble_filter_coefficients_with_floor, half_gram, to_divergence_form, DivergenceOptions,
};
use super::divergence::DivergenceFormSpec;
use super::system::SystemSpec;
use super::vmo::{vmo_osc_sup, VmoQuadrature};
use crate::linalg::{mul, mul_transpose, sym_eig_extremes};
use crate::rng::{Domain, StreamKey};

/// Names of the individual checks in an [`AssumptionReport`].
pub mod checks {
    /// `ξ·aξ ≤ δ⁻¹|ξ|²`.
    pub const ELLIPTICITY_UPPER: &str = "ellipticity_upper";
    /// `ξ·(a - α)ξ ≥ δ|ξ|²`.
    pub const PARABOLICITY: &str = "parabolicity";
    /// `ã ≥ δ` with `2ã = θθ* + ΘΘ*` on the full state.
    pub const NONDEGENERACY: &str = "nondegeneracy";
    /// `ΘΘ*` invertible above the eigenvalue floor.
    pub const OBSERVATION_INVERTIBLE: &str = "observation_invertible";
    /// `θ(I - Θ*Ψ²Θ)θ* ≥ δ`.
    pub const CROSS_ELLIPTICITY: &str = "cross_ellipticity";
    /// `c ≤ 0`.
    pub const REACTION_SIGN: &str = "reaction_sign";
    /// Coefficient magnitudes bounded by K.
    pub const BOUND: &str = "bound";
    /// Sampled difference quotients bounded by K (can only refute).
    pub const LIPSCHITZ: &str = "lipschitz";
    /// `(a(x) - α(y))ξ·ξ ≥ δ|ξ|²` for `|x - y| ≤ ε`.
    pub const NEIGHBOURHOOD_PARABOLICITY: &str = "neighbourhood_parabolicity";
    /// `Osc_ε(a^{ij}, y) ≤ β₀`.
    pub const DIFFUSION_OSCILLATION: &str = "diffusion_oscillation";
    /// `|σ^{i·}(x) - σ^{i·}(y)| ≤ β₁` for `|x - y| ≤ ε₁`.
    pub const NOISE_OSCILLATION: &str = "noise_oscillation";
}

/// Oscillation thresholds; `None` thresholds are report-only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationCheck {
    pub epsilon: f64,
    pub beta0: Option<f64>,
    pub epsilon1: f64,
    pub beta1: Option<f64>,
    /// Number of sample centres `y` for `Osc_ε`.
    pub centres: usize,
    pub window: (f64, f64),
    pub quadrature: VmoQuadrature,
}

impl Default for OscillationCheck {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            beta0: None,
            epsilon1: 0.5,
            beta1: None,
            centres: 8,
            window: (0.0, 1.0),
            quadrature: VmoQuadrature::coarse(),
        }
    }
}

/// Where and how densely assumptions are sampled. Points live in `z`-space
/// for a [`SystemSpec`] and in `x`-space for a [`DivergenceFormSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grid_per_axis: usize,
    pub quasi_random: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub lipschitz_pairs: usize,
    pub eigen_floor: f64,
    pub oscillation: Option<OscillationCheck>,
}

impl SamplePlan {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            grid_per_axis: 5,
            quasi_random: 10_000,
            seed: 0,
            times: vec![0.0],
            lipschitz_pairs: 2_000,
            eigen_floor: super::DEFAULT_EIGEN_FLOOR,
            oscillation: None,
        }
    }

    pub fn with_quasi_random(mut self, n: usize) -> Self {
        self.quasi_random = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_times(mut self, times: Vec<f64>) -> Self {
        self.times = times;
        self
    }

    pub fn with_oscillation(mut self, osc: OscillationCheck) -> Self {
        self.oscillation = Some(osc);
        self
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Deterministic tensor grid followed by a shifted Halton sequence.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let mut pts = Vec::new();
        if dim == 0 {
            return pts;
        }
        let g = self.grid_per_axis;
        if g > 0 {
            let total = g.checked_pow(dim as u32).unwrap_or(usize::MAX).min(100_000);
            for idx in 0..total {
                let mut rem = idx;
                let mut p = Vec::with_capacity(dim);
                for a in 0..dim {
                    let i = rem % g;
                    rem /= g;
                    let frac = if g == 1 {
                        0.5
                    } else {
                        i as f64 / (g - 1) as f64
                    };
                    p.push(self.lower[a] + frac * (self.upper[a] - self.lower[a]));
                }
                pts.push(p);
            }
        }
        let mut rng = StreamKey::new(self.seed, Domain::Sampling, 0).at(0);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        for i in 0..self.quasi_random {
            let p = (0..dim)
                .map(|a| {
                    let u = (radical_inverse(i as u64 + 1, PRIMES[a % PRIMES.len()]) + shift[a])
                        .fract();
                    self.lower[a] + u * (self.upper[a] - self.lower[a])
                })
                .collect();
            pts.push(p);
        }
        pts
    }

    fn time(&self, i: usize) -> f64 {
        if self.times.is_empty() {
            0.0
        } else {
            self.times[i % self.times.len()]
        }
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Worst signed margin; negative means violated.
    pub margin: f64,
    pub worst_point: Vec<f64>,
    pub worst_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationValue {
    pub name: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub checks: Vec<AssumptionCheck>,
    pub oscillations: Vec<OscillationValue>,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.oscillations.iter().all(|o| o.passed)
    }
}

/// What to validate.
#[derive(Clone, Copy, Debug)]
pub enum ValidationTarget<'a> {
    System(&'a SystemSpec),
    Divergence(&'a DivergenceFormSpec),
}

impl<'a> From<&'a SystemSpec> for ValidationTarget<'a> {
    fn from(s: &'a SystemSpec) -> Self {
        ValidationTarget::System(s)
    }
}

impl<'a> From<&'a DivergenceFormSpec> for ValidationTarget<'a> {
    fn from(s: &'a DivergenceFormSpec) -> Self {
        ValidationTarget::Divergence(s)
    }
}

/// Samples every grid-checkable assumption. Violations are reported, never
/// raised.
pub fn validate_assumptions<'a>(
    target: impl Into<ValidationTarget<'a>>,
    plan: &SamplePlan,
) -> AssumptionReport {
    match target.into() {
        ValidationTarget::System(s) => validate_system(s, plan),
        ValidationTarget::Divergence(s) => validate_divergence(s, plan),
    }
}

/// Running minimum keeping the first worst sample.
struct Worst {
    name: &'static str,
    margin: f64,
    point: Vec<f64>,
    time: f64,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            margin: f64::INFINITY,
            point: Vec::new(),
            time: 0.0,
        }
    }

    fn offer(&mut self, margin: f64, point: &[f64], time: f64) {
        // NaN margins count as violations
        let m = if margin.is_nan() {
            f64::NEG_INFINITY
        } else {
            margin
        };
        if m < self.margin {
            self.margin = m;
            self.point = point.to_vec();
            self.time = time;
        }
    }

    fn finish(self) -> AssumptionCheck {
        AssumptionCheck {
            name: self.name.to_string(),
            passed: self.margin >= 0.0,
            margin: self.margin,
            worst_point: self.point,
            worst_time: self.time,
        }
    }
}

fn validate_system(spec: &SystemSpec, plan: &SamplePlan) -> AssumptionReport {
    let (d, k, m, d1) = (spec.d(), spec.k(), spec.m(), spec.d1());
    assert_eq!(plan.dim(), d1, "system sample plan lives in z-space");
    let delta = spec.delta;
    let points = plan.points();

    let margins: Vec<[f64; 6]> = points
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let t = plan.time(i);
            let (x, y) = z.split_at(d);
            let mut th = vec![0.0; d * m];
            let mut obs = vec![0.0; k * m];
            let mut b = vec![0.0; d];
            let mut bb = vec![0.0; k];
            spec.signal_diffusion(t, x, y, &mut th);
            spec.obs_diffusion(t, y, &mut obs);
            spec.drift(t, x, y, &mut b);
            spec.obs_drift(t, x, y, &mut bb);

            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let largest = norm(&th).max(norm(&obs)).max(norm(&b)).max(norm(&bb));
            let bound = spec.bound - largest;

            let mut a = vec![0.0; d * d];
            half_gram(&th, d, m, &mut a);
            let upper = 1.0 / delta - sym_eig_extremes(&a, d).1;

            let mut full = vec![0.0; d1 * m];
            full[..d * m].copy_from_slice(&th);
            full[d * m..].copy_from_slice(&obs);
            let mut at = vec![0.0; d1 * d1];
            half_gram(&full, d1, m, &mut at);
            let nondeg = sym_eig_extremes(&at, d1).0 - delta;

            let mut gram = vec![0.0; k * k];
            mul_transpose(&obs, &obs, k, m, k, &mut gram);
            let obs_min = sym_eig_extremes(&gram, k).0;
            let invertible = obs_min - plan.eigen_floor;

            let (parab, cross) =
                match assemble_filter_coefficients_with_floor(spec, t, y, plan.eigen_floor) {
                    Ok(fc) => {
                        let parab = fc.parabolicity(x) - delta;
                        // θ(I - Θ*Ψ²Θ)θ*
                        let psi = fc.psi();
                        let mut psi2 = vec![0.0; k * k];
                        mul(psi, psi, k, k, k, &mut psi2);
                        let mut p2t = vec![0.0; k * m];
                        mul(&psi2, &obs, k, k, m, &mut p2t);
                        let mut proj = vec![0.0; m * m];
                        for r in 0..m {
                            for c in 0..m {
                                let mut acc = 0.0;
                                for l in 0..k {
                                    acc += obs[l * m + r] * p2t[l * m + c];
                                }
                                proj[r * m + c] = if r == c { 1.0 } else { 0.0 } - acc;
                            }
                        }
                        let mut tp = vec![0.0; d * m];
                        mul(&th, &proj, d, m, m, &mut tp);
                        let mut q = vec![0.0; d * d];
                        mul_transpose(&tp, &th, d, m, d, &mut q);
                        (parab, sym_eig_extremes(&q, d).0 - delta)
                    }
                    Err(_) => (f64::NEG_INFINITY, f64::NEG_INFINITY),
                };
            [upper, parab, nondeg, invertible, cross, bound]
        })
        .collect();

    let mut worst = [
        Worst::new(checks::ELLIPTICITY_UPPER),
        Worst::new(checks::PARABOLICITY),
        Worst::new(checks::NONDEGENERACY),
        Worst::new(checks::OBSERVATION_INVERTIBLE),
        Worst::new(checks::CROSS_ELLIPTICITY),
        Worst::new(checks::BOUND),
    ];
    for (i, (row, z)) in margins.iter().zip(&points).enumerate() {
        for (w, &mgn) in worst.iter_mut().zip(row) {
            w.offer(mgn, z, plan.time(i));
        }
    }
    let mut report = AssumptionReport {
        samples: points.len(),
        checks: worst.into_iter().map(Worst::finish).collect(),
        oscillations: Vec::new(),
    };
    report.checks.push(system_lipschitz(spec, plan, &points));

    if let Some(osc) = &plan.oscillation {
        let y_centre: Vec<f64> = (d..d1)
            .map(|a| 0.5 * (plan.lower[a] + plan.upper[a]))
            .collect();
        let t0 = plan.time(0);
        if let Ok(fc) =
            assemble_filter_coefficients_with_floor(spec, t0, &y_centre, plan.eigen_floor)
        {
            let opts = DivergenceOptions {
                derivative_step: 1e-4,
                check_points: Vec::new(),
            };
            if let Ok(div) = to_divergence_form(&fc, &opts) {
                let sub = SamplePlan {
                    lower: plan.lower[..d].to_vec(),
                    upper: plan.upper[..d].to_vec(),
                    ..plan.clone()
                };
                let (mut c, o) = oscillation_checks(&div, &sub, osc, spec.delta);
                report.checks.append(&mut c);
                report.oscillations = o;
            }
        }
    }
    report
}

fn system_lipschitz(spec: &SystemSpec, plan: &SamplePlan, points: &[Vec<f64>]) -> AssumptionCheck {
    let (d, k, m, d1) = (spec.d(), spec.k(), spec.m(), spec.d1());
    let mut worst = Worst::new(checks::LIPSCHITZ);
    if points.is_empty() || plan.lipschitz_pairs == 0 {
        return worst.finish();
    }
    let quotients: Vec<(f64, Vec<f64>, f64)> = (0..plan.lipschitz_pairs)
        .into_par_iter()
        .map(|j| {
            let mut rng = StreamKey::new(plan.seed, Domain::Sampling, 1).at(j as u64);
            let base = &points[j % points.len()];
            let t = plan.time(j);
            let mut dir: Vec<f64> = (0..d1).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            // log-uniform length in [1e-3, 1]
            let len = 10f64.powf(-3.0 * rng.random::<f64>());
            dir.iter_mut().for_each(|v| *v *= len / n);
            let other: Vec<f64> = base.iter().zip(&dir).map(|(a, b)| a + b).collect();
            let dz = len;
            let eval = |z: &[f64]| {
                let (x, y) = z.split_at(d);
                let mut v = vec![0.0; d + d * m + k + k * m];
                let (b, rest) = v.split_at_mut(d);
                let (th, rest) = rest.split_at_mut(d * m);
                let (bb, obs) = rest.split_at_mut(k);
                spec.drift(t, x, y, b);
                spec.signal_diffusion(t, x, y, th);
                spec.obs_drift(t, x, y, bb);
                spec.obs_diffusion(t, y, obs);
                v
            };
            let (va, vb) = (eval(base), eval(&other));
            let segments = [d, d * m, k, k * m];
            let mut off = 0;
            let mut q: f64 = 0.0;
            for s in segments {
                let diff = va[off..off + s]
                    .iter()
                    .zip(&vb[off..off + s])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                q = q.max(diff / dz);
                off += s;
            }
            (q, base.clone(), t)
        })
        .collect();
    for (q, p, t) in quotients {
        worst.offer(spec.bound - q, &p, t);
    }
    worst.finish()
}

fn validate_divergence(spec: &DivergenceFormSpec, plan: &SamplePlan) -> AssumptionReport {
    let d = spec.d;
    let mch = spec.channels;
    assert_eq!(plan.dim(), d, "divergence sample plan lives in x-space");
    let delta = spec.delta;
    let points = plan.points();
    let margins: Vec<[f64; 4]> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let t = plan.time(i);
            let mut a = vec![0.0; d * d];
            (spec.diffusion)(t, x, &mut a);
            let mut alpha = vec![0.0; d * d];
            spec.noise_correction(t, x, &mut alpha);
            let upper = 1.0 / delta - sym_eig_extremes(&a, d).1;
            let diff: Vec<f64> = a.iter().zip(&alpha).map(|(p, q)| p - q).collect();
            let parab = sym_eig_extremes(&diff, d).0 - delta;
            let c = spec.reaction.as_ref().map_or(0.0, |f| f(t, x));
            let mut v = vec![0.0; d.max(mch)];
            let mut norm_of = |f: &Option<super::StateFn>, len: usize| {
                f.as_ref().map_or(0.0, |f| {
                    f(t, x, &mut v[..len]);
                    v[..len].iter().map(|a| a * a).sum::<f64>().sqrt()
                })
            };
            let total = norm_of(&spec.convection, d)
                + norm_of(&spec.drift, d)
                + c.abs()
                + norm_of(&spec.noise_reaction, mch);
            [upper, parab, -c, spec.bound - total]
        })
        .collect();
    let mut worst = [
        Worst::new(checks::ELLIPTICITY_UPPER),
        Worst::new(checks::PARABOLICITY),
        Worst::new(checks::REACTION_SIGN),
        Worst::new(checks::BOUND),
    ];
    for (i, (row, x)) in margins.iter().zip(&points).enumerate() {
        for (w, &mgn) in worst.iter_mut().zip(row) {
            w.offer(mgn, x, plan.time(i));
        }
    }
    let mut report = AssumptionReport {
        samples: points.len(),
        checks: worst.into_iter().map(Worst::finish).collect(),
        oscillations: Vec::new(),
    };
    if let Some(osc) = &plan.oscillation {
        let (mut c, o) = oscillation_checks(spec, plan, osc, delta);
        report.checks.append(&mut c);
        report.oscillations = o;
    }
    report
}

/// VMO-type checks on x-space samples.
fn oscillation_checks(
    spec: &DivergenceFormSpec,
    plan: &SamplePlan,
    osc: &OscillationCheck,
    delta: f64,
) -> (Vec<AssumptionCheck>, Vec<OscillationValue>) {
    let d = spec.d;
    let mch = spec.channels;
    let points = plan.points();
    let centres: Vec<&Vec<f64>> = points
        .iter()
        .step_by((points.len() / osc.centres.max(1)).max(1))
        .take(osc.centres)
        .collect();

    let mut values = Vec::new();
    for i in 0..d {
        for j in 0..d {
            let diffusion = spec.diffusion.clone();
            let h = move |t: f64, x: &[f64]| {
                let mut a = vec![0.0; d * d];
                diffusion(t, x, &mut a);
                a[i * d + j]
            };
            let worst = centres
                .iter()
                .map(|y| {
                    vmo_osc_sup(&h, osc.epsilon, y, osc.window, &osc.quadrature).unwrap_or(f64::NAN)
                })
                .fold(0.0, f64::max);
            values.push(OscillationValue {
                name: format!("{}[{i}{j}]", checks::DIFFUSION_OSCILLATION),
                value: worst,
                threshold: osc.beta0,
                passed: osc.beta0.is_none_or(|b| worst <= b),
            });
        }
    }

    // pairs |x - y| ≤ ε: neighbourhood parabolicity and σ oscillation
    let pair_count = plan.lipschitz_pairs.max(1);
    let pairs: Vec<(f64, f64, Vec<f64>, f64)> = (0..pair_count)
        .into_par_iter()
        .map(|j| {
            let mut rng = StreamKey::new(plan.seed, Domain::Sampling, 2).at(j as u64);
            let x = &points[j % points.len()];
            let t = plan.time(j);
            let dir: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let r: f64 = rng.random();
            let scale_a = r * osc.epsilon / n;
            let ya: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b * scale_a).collect();
            let mut a = vec![0.0; d * d];
            let mut alpha = vec![0.0; d * d];
            (spec.diffusion)(t, x, &mut a);
            spec.noise_correction(t, &ya, &mut alpha);
            let diff: Vec<f64> = a.iter().zip(&alpha).map(|(p, q)| p - q).collect();
            let neigh = sym_eig_extremes(&diff, d).0 - delta;

            let scale_s = r * osc.epsilon1 / n;
            let ys: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b * scale_s).collect();
            let sig_osc = spec.noise_gradient.as_ref().map_or(0.0, |f| {
                let mut s1 = vec![0.0; d * mch];
                let mut s2 = vec![0.0; d * mch];
                f(t, x, &mut s1);
                f(t, &ys, &mut s2);
                (0..d)
                    .map(|i| {
                        (0..mch)
                            .map(|k| (s1[i * mch + k] - s2[i * mch + k]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max)
            });
            (neigh, sig_osc, x.clone(), t)
        })
        .collect();
    let mut neigh = Worst::new(checks::NEIGHBOURHOOD_PARABOLICITY);
    let mut sig_max: f64 = 0.0;
    for (n, s, x, t) in &pairs {
        neigh.offer(*n, x, *t);
        sig_max = sig_max.max(*s);
    }
    values.push(OscillationValue {
        name: checks::NOISE_OSCILLATION.to_string(),
        value: sig_max,
        threshold: osc.beta1,
        passed: osc.beta1.is_none_or(|b| sig_max <= b),
    });
    (vec![neigh.finish()], values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plan(dim: usize) -> SamplePlan {
        SamplePlan::new(vec![-2.0; dim], vec![2.0; dim]).with_quasi_random(500)
    }

    fn disjoint(delta: f64) -> SystemSpec {
        SystemSpec::new(
            1,
            2,
            2,
            10.0,
            delta,
            |_, z, o| o[0] = -z[0],
            |_, _, o| {
                o[0] = 1.0;
                o[1] = 0.0;
            },
            |_, z, o| o[0] = z[0],
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 1.0;
            },
        )
        .unwrap()
    }

    #[test]
    fn disjoint_noise_passes_everything() {
        let r = validate_assumptions(&disjoint(0.4), &plan(2));
        assert!(r.all_passed(), "{r:#?}");
        assert_relative_eq!(
            r.check(checks::CROSS_ELLIPTICITY).unwrap().margin,
            0.6,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            r.check(checks::PARABOLICITY).unwrap().margin,
            0.1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn correlated_scalar_margin() {
        let spec = SystemSpec::new(
            1,
            2,
            2,
            10.0,
            0.3,
            |_, z, o| o[0] = -z[0],
            |_, _, o| {
                o[0] = 1.0;
                o[1] = 0.5;
            },
            |_, z, o| o[0] = z[0],
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 1.0;
            },
        )
        .unwrap();
        let r = validate_assumptions(&spec, &plan(2));
        assert_relative_eq!(
            r.check(checks::CROSS_ELLIPTICITY).unwrap().margin,
            0.7,
            epsilon = 1e-12
        );
        assert!(r.check(checks::NONDEGENERACY).unwrap().passed);
    }

    #[test]
    fn noise_consuming_the_diffusion_fails_by_delta() {
        let delta = 0.25;
        let spec = DivergenceFormSpec::new(1, 1, |_, _, o| o[0] = 0.5)
            .with_noise_gradient(|_, _, o| o[0] = 1.0)
            .with_constants(10.0, delta);
        let r = validate_assumptions(&spec, &plan(1));
        let c = r.check(checks::PARABOLICITY).unwrap();
        assert!(!c.passed);
        assert_relative_eq!(c.margin, -delta, epsilon = 1e-14);

        let sys = SystemSpec::new(
            1,
            2,
            1,
            10.0,
            delta,
            |_, _, o| o[0] = 0.0,
            |_, _, o| o[0] = 1.0,
            |_, _, o| o[0] = 0.0,
            |_, _, o| o[0] = 1.0,
        )
        .unwrap();
        let r = validate_assumptions(&sys, &plan(2));
        assert_relative_eq!(
            r.check(checks::PARABOLICITY).unwrap().margin,
            -delta,
            epsilon = 1e-14
        );
    }

    #[test]
    fn positive_reaction_is_reported() {
        let spec = DivergenceFormSpec::new(1, 0, |_, _, o| o[0] = 1.0)
            .with_reaction(|_, x| x[0])
            .with_constants(10.0, 0.5);
        let r = validate_assumptions(&spec, &plan(1));
        let c = r.check(checks::REACTION_SIGN).unwrap();
        assert!(!c.passed);
        assert_relative_eq!(c.margin, -2.0, epsilon = 1e-12);
        assert_eq!(c.worst_point, vec![2.0]);
    }

    #[test]
    fn lipschitz_check_refutes_steep_drift() {
        let spec = SystemSpec::new(
            1,
            2,
            2,
            1.0,
            0.1,
            |_, z, o| o[0] = 5.0 * z[0],
            |_, _, o| {
                o[0] = 1.0;
                o[1] = 0.0;
            },
            |_, _, o| o[0] = 0.0,
            |_, _, o| {
                o[0] = 0.0;
                o[1] = 1.0;
            },
        )
        .unwrap();
        let r = validate_assumptions(&spec, &plan(2));
        let lip = r.check(checks::LIPSCHITZ).unwrap();
        assert!(!lip.passed);
        assert!(lip.margin < -3.0);
    }

    #[test]
    fn margins_reproducible_under_fixed_seed() {
        let p = plan(2).with_seed(17);
        let a = validate_assumptions(&disjoint(0.4), &p);
        let b = validate_assumptions(&disjoint(0.4), &p);
        assert_eq!(a, b);
    }

    #[test]
    fn oscillation_of_kink_is_reported() {
        let spec = crate::model::families::kink(&crate::model::families::KinkParams {
            base: 1.0,
            slope: 0.5,
            convection: 0.0,
            noise_gradient: 0.3,
            noise_reaction: 0.5,
            bound: 10.0,
            delta: 0.5,
        });
        let p = plan(1).with_oscillation(OscillationCheck {
            beta0: Some(1.0),
            ..OscillationCheck::default()
        });
        let r = validate_assumptions(&spec, &p);
        let osc = &r.oscillations[0];
        assert!(osc.value > 0.0 && osc.passed);
        // σ is constant, so its oscillation vanishes
        assert_eq!(r.oscillations.last().unwrap().value, 0.0);
        assert!(r.check(checks::NEIGHBOURHOOD_PARABOLICITY).unwrap().passed);
    }
}
