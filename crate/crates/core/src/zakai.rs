//! Filtering pipeline: the unnormalized conditional density is advanced as
//! a divergence-form SPDE driven by the observation increments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::exact_sum;
use crate::model::{
    assemble_filter_coefficients_with_floor, to_divergence_form, DivergenceFormSpec,
    DivergenceOptions, FilterCoefficients, InitialLaw, ModelError, SystemSpec, DEFAULT_EIGEN_FLOOR,
};
use crate::rng::Increments;
use crate::sde_sim::PathBundle;
use crate::spde_solver::{
    assemble_operator, step, FieldState, ForcingSnapshot, Grid, ImplicitMatrix, OperatorStencil,
    SolverError, SolverOptions, StepReport, Trajectory,
};

#[derive(Debug, Error)]
pub enum ZakaiError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("unnormalized mass {mass:e} at t = {t} is at or below the floor {floor:e}")]
    MassCollapse { t: f64, mass: f64, floor: f64 },
    #[error("initial density: {0}")]
    BadInitial(String),
    #[error("incompatible input: {0}")]
    Incompatible(String),
    #[error("t = {0} is not a recorded snapshot time")]
    NotOnSnapshotGrid(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZakaiOptions {
    pub solver: SolverOptions,
    pub mass_floor: f64,
    /// Required closeness of `(π₀, 1)` to 1; `None` accepts any positive mass.
    pub initial_mass_tolerance: Option<f64>,
    pub eigen_floor: f64,
    /// Finite-difference step for coefficient derivatives.
    pub derivative_step: f64,
    /// Verify `a - ½σσ* ≥ δ/2` on every `check_stride`-th grid node.
    pub check_ellipticity: bool,
    pub check_stride: usize,
    /// Record `Ê[B(t, ·, y_t)]` for the innovation process.
    pub innovation: bool,
    /// Fraction of the half-width treated as the boundary layer when
    /// reporting boundary mass.
    pub boundary_layer: f64,
}

impl Default for ZakaiOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            mass_floor: 1e-14,
            initial_mass_tolerance: Some(1e-8),
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            derivative_step: 1e-5,
            check_ellipticity: true,
            check_stride: 8,
            innovation: true,
            boundary_layer: 0.1,
        }
    }
}

/// Per-step records of a filter run plus the stored unnormalized densities.
#[derive(Clone, Debug)]
pub struct FilterOutput {
    pub grid: Grid,
    pub dt: f64,
    /// One entry per time step, `t_0 .. t_N`.
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    /// Conditional covariance, row-major d × d.
    pub covariance: Vec<Vec<f64>>,
    /// `max(0, -min π̄_t)`.
    pub undershoot: Vec<f64>,
    /// `max π̄_t`.
    pub peak: Vec<f64>,
    /// Share of the mass in the outer layer of the box.
    pub boundary_mass: Vec<f64>,
    /// `Ê[B(t_n, ·, y_n)]`, empty when not requested.
    pub obs_drift_mean: Vec<Vec<f64>>,
    /// Snapshots of `π̄` at the solver stride.
    pub pibar: Trajectory,
    pub reports: Vec<StepReport>,
    pub clipped: bool,
    pub mass_floor: f64,
}

impl FilterOutput {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn snapshot_index(&self, t: f64) -> Result<usize, ZakaiError> {
        self.pibar
            .states
            .iter()
            .position(|s| (s.t - t).abs() <= 1e-9 * self.dt)
            .ok_or(ZakaiError::NotOnSnapshotGrid(t))
    }

    /// `π_t = π̄_t / (π̄_t, 1)` at snapshot `i`.
    pub fn normalized(&self, i: usize) -> Vec<f64> {
        let s = &self.pibar.states[i];
        let mass = s.mass(&self.grid);
        s.values.iter().map(|v| v / mass).collect()
    }

    pub fn max_relative_undershoot(&self) -> f64 {
        self.undershoot
            .iter()
            .zip(&self.peak)
            .map(|(u, p)| if *p > 0.0 { u / p } else { 0.0 })
            .fold(0.0, f64::max)
    }

    pub fn min_mass(&self) -> f64 {
        self.mass.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Conditional variance of coordinate `i` at every step.
    pub fn variance(&self, i: usize) -> Vec<f64> {
        let d = self.grid.d;
        self.covariance.iter().map(|c| c[i * d + i]).collect()
    }
}

/// Discretizes an initial law on the grid and normalizes it to unit mass.
/// A point mass is replaced by a Gaussian one cell wide.
pub fn initial_density(law: &InitialLaw, grid: &Grid) -> Result<FieldState, ZakaiError> {
    law.validate()?;
    if law.dim() != grid.d {
        return Err(ZakaiError::BadInitial(
            "law and grid dimensions differ".into(),
        ));
    }
    let values = match law {
        InitialLaw::Point { x } => {
            let var = grid.h * grid.h;
            let cov: Vec<f64> = (0..grid.d * grid.d)
                .map(|i| if i % (grid.d + 1) == 0 { var } else { 0.0 })
                .collect();
            let smooth = InitialLaw::Gaussian {
                mean: x.clone(),
                cov,
            };
            grid.sample(|p| smooth.unnormalized_density(p).unwrap_or(0.0))
        }
        _ => grid.sample(|p| law.unnormalized_density(p).unwrap_or(0.0)),
    };
    let mut state = FieldState::new(grid, values, 0.0)?;
    let mass = state.mass(grid);
    if !(mass > 0.0) {
        return Err(ZakaiError::BadInitial(
            "law puts no mass on the grid".into(),
        ));
    }
    state.values.iter_mut().for_each(|v| *v /= mass);
    Ok(state)
}

struct Frozen {
    fc: FilterCoefficients,
    stencil: OperatorStencil,
}

fn freeze(
    spec: &SystemSpec,
    grid: &Grid,
    t: f64,
    y: &[f64],
    opts: &ZakaiOptions,
    check: &[Vec<f64>],
) -> Result<Frozen, ZakaiError> {
    let fc = assemble_filter_coefficients_with_floor(spec, t, y, opts.eigen_floor)?;
    let div = to_divergence_form(
        &fc,
        &DivergenceOptions {
            derivative_step: opts.derivative_step,
            check_points: check.to_vec(),
        },
    )?;
    let stencil = assemble_operator(&div, grid, t, opts.solver.memory_budget)?;
    Ok(Frozen { fc, stencil })
}

struct Moments {
    mass: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    undershoot: f64,
    peak: f64,
    boundary: f64,
}

fn moments(grid: &Grid, u: &[f64], layer: f64) -> Moments {
    let d = grid.d;
    let vol = grid.cell_volume();
    let total = exact_sum(u.iter().cloned());
    let mut x = vec![0.0; d];
    let mut first = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    let mut outer = 0.0;
    let cut = (1.0 - layer) * grid.half_width;
    for (p, v) in u.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        grid.coords(p, &mut x);
        for i in 0..d {
            first[i] += v * x[i];
            for j in 0..d {
                second[i * d + j] += v * x[i] * x[j];
            }
        }
        if x.iter().any(|c| c.abs() >= cut) {
            outer += v.abs();
        }
    }
    let mean: Vec<f64> = first.iter().map(|f| f / total).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = second[i * d + j] / total - mean[i] * mean[j];
        }
    }
    Moments {
        mass: total * vol,
        mean,
        cov,
        undershoot: (-u.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0),
        peak: u.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        boundary: if total != 0.0 {
            outer / total.abs()
        } else {
            0.0
        },
    }
}

fn obs_drift_mean(spec: &SystemSpec, grid: &Grid, t: f64, y: &[f64], u: &[f64]) -> Vec<f64> {
    let k = spec.k();
    let mut acc = vec![0.0; k];
    let mut x = vec![0.0; grid.d];
    let mut b = vec![0.0; k];
    let mut total = 0.0;
    for (p, v) in u.iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        grid.coords(p, &mut x);
        spec.obs_drift(t, &x, y, &mut b);
        for r in 0..k {
            acc[r] += v * b[r];
        }
        total += v;
    }
    acc.iter().map(|a| a / total).collect()
}

/// Runs the filter on the observation path of `paths` with step `dt`, which
/// must be an integer multiple of the path step.
pub fn run_zakai(
    spec: &SystemSpec,
    paths: &PathBundle,
    pi0: FieldState,
    grid: &Grid,
    dt: f64,
    opts: &ZakaiOptions,
) -> Result<FilterOutput, ZakaiError> {
    if paths.d != spec.d() || paths.k != spec.k() {
        return Err(ZakaiError::Incompatible(
            "paths do not match the system dimensions".into(),
        ));
    }
    let ratio = dt / paths.dt;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(ZakaiError::Incompatible(format!(
            "filter step {dt} is not a multiple of the path step {}",
            paths.dt
        )));
    }
    let thinned;
    let paths = if factor > 1.0 {
        thinned = paths.thinned(factor as usize);
        &thinned
    } else {
        paths
    };
    let pi0 = FieldState::new(grid, pi0.values, 0.0)?;
    if pi0.min() < 0.0 {
        return Err(ZakaiError::BadInitial("negative values".into()));
    }
    let m0 = pi0.mass(grid);
    match opts.initial_mass_tolerance {
        Some(tol) if (m0 - 1.0).abs() > tol => {
            return Err(ZakaiError::BadInitial(format!("mass {m0} differs from 1")));
        }
        None if !(m0 > 0.0) => return Err(ZakaiError::BadInitial("zero mass".into())),
        _ => {}
    }
    let dt = paths.dt;
    let steps = paths.steps();
    let check: Vec<Vec<f64>> = if opts.check_ellipticity {
        (0..grid.nodes())
            .filter(|p| !grid.is_boundary(*p))
            .step_by(if spec.is_autonomous() {
                1
            } else {
                opts.check_stride.max(1)
            })
            .map(|p| grid.point(p))
            .collect()
    } else {
        Vec::new()
    };

    let k = spec.k();
    let mut out = FilterOutput {
        grid: *grid,
        dt,
        times: Vec::with_capacity(steps + 1),
        mass: Vec::with_capacity(steps + 1),
        mean: Vec::with_capacity(steps + 1),
        covariance: Vec::with_capacity(steps + 1),
        undershoot: Vec::with_capacity(steps + 1),
        peak: Vec::with_capacity(steps + 1),
        boundary_mass: Vec::with_capacity(steps + 1),
        obs_drift_mean: Vec::new(),
        pibar: Trajectory::new(*grid, dt, opts.solver.clone(), pi0.clone()),
        reports: Vec::with_capacity(steps),
        clipped: opts.solver.clip,
        mass_floor: opts.mass_floor,
    };
    let record = |out: &mut FilterOutput, state: &FieldState, n: usize| -> Result<(), ZakaiError> {
        let m = moments(grid, &state.values, opts.boundary_layer);
        if !(m.mass > opts.mass_floor) {
            return Err(ZakaiError::MassCollapse {
                t: state.t,
                mass: m.mass,
                floor: opts.mass_floor,
            });
        }
        out.times.push(state.t);
        out.mass.push(m.mass);
        out.mean.push(m.mean);
        out.covariance.push(m.cov);
        out.undershoot.push(m.undershoot);
        out.peak.push(m.peak);
        out.boundary_mass.push(m.boundary);
        if opts.innovation {
            out.obs_drift_mean.push(obs_drift_mean(
                spec,
                grid,
                state.t,
                paths.y_at(n),
                &state.values,
            ));
        }
        Ok(())
    };

    let mut state = pi0;
    record(&mut out, &state, 0)?;
    if steps == 0 {
        return Ok(out);
    }
    let forcing = ForcingSnapshot::default();
    let mut now = freeze(spec, grid, 0.0, paths.y_at(0), opts, &check)?;
    let fixed = spec
        .is_autonomous()
        .then(|| ImplicitMatrix::new(&now.stencil, dt));
    let mut dz = vec![0.0; k];
    for n in 0..steps {
        let t_next = (n + 1) as f64 * dt;
        let dy = paths.dy_at(n);
        now.fc.psi_apply(&dy, &mut dz);
        let (next, owned);
        let implicit = match &fixed {
            Some(f) => {
                next = None;
                f
            }
            None => {
                let fr = freeze(spec, grid, t_next, paths.y_at(n + 1), opts, &check)?;
                owned = ImplicitMatrix::new(&fr.stencil, dt);
                next = Some(fr);
                &owned
            }
        };
        let (mut s, rep) = step(&state, &now.stencil, implicit, &forcing, &dz, &opts.solver)?;
        s.t = t_next;
        state = s;
        if let Some(fr) = next {
            now = fr;
        }
        record(&mut out, &state, n + 1)?;
        out.pibar.record(n + 1, &state, rep, n + 1 == steps);
        out.reports.push(rep);
    }
    Ok(out)
}

/// `(π̄_t, f) / (π̄_t, 1)` at a snapshot time.
/// The equation for `π̄` as divergence-form data frozen at `(t, y)`. For an
/// autonomous system it holds over the whole run.
pub fn filter_equation(
    spec: &SystemSpec,
    t: f64,
    y: &[f64],
    opts: &ZakaiOptions,
) -> Result<DivergenceFormSpec, ZakaiError> {
    let fc = assemble_filter_coefficients_with_floor(spec, t, y, opts.eigen_floor)?;
    Ok(to_divergence_form(
        &fc,
        &DivergenceOptions {
            derivative_step: opts.derivative_step,
            check_points: Vec::new(),
        },
    )?)
}

/// `dZ_n = Ψ(t_n, y_n) Δy_n` on the step of `paths`.
pub fn observation_driver(
    spec: &SystemSpec,
    paths: &PathBundle,
    opts: &ZakaiOptions,
) -> Result<Increments, ZakaiError> {
    let k = spec.k();
    let steps = paths.steps();
    let mut data = vec![0.0; steps * k];
    for n in 0..steps {
        let t = n as f64 * paths.dt;
        let fc = assemble_filter_coefficients_with_floor(spec, t, paths.y_at(n), opts.eigen_floor)?;
        fc.psi_apply(&paths.dy_at(n), &mut data[n * k..(n + 1) * k]);
    }
    Ok(Increments::from_raw(k, paths.dt, data))
}

pub fn conditional_expectation(
    out: &FilterOutput,
    f: &dyn Fn(&[f64]) -> f64,
    t: f64,
) -> Result<f64, ZakaiError> {
    let i = out.snapshot_index(t)?;
    let s = &out.pibar.states[i];
    let grid = &out.grid;
    let mass = s.mass(grid);
    if !(mass > out.mass_floor) {
        return Err(ZakaiError::MassCollapse {
            t,
            mass,
            floor: out.mass_floor,
        });
    }
    let mut x = vec![0.0; grid.d];
    let weighted = exact_sum(s.values.iter().enumerate().map(|(p, v)| {
        if *v == 0.0 {
            return 0.0;
        }
        grid.coords(p, &mut x);
        v * f(&x)
    }));
    Ok(weighted * grid.cell_volume() / mass)
}

/// Innovation increments and their running quadratic variation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Innovation {
    pub k: usize,
    pub dt: f64,
    /// Step-major, `steps × k`.
    pub increments: Vec<f64>,
    /// Running `Σ Δw̌ Δw̌*`, `(steps + 1) × k × k`.
    pub quadratic_variation: Vec<f64>,
}

impl Innovation {
    pub fn steps(&self) -> usize {
        self.increments.len() / self.k.max(1)
    }

    pub fn qv(&self, n: usize, i: usize, j: usize) -> f64 {
        self.quadratic_variation[n * self.k * self.k + i * self.k + j]
    }

    /// Least-squares slope of `QV_ij(t)` against `t`.
    pub fn qv_slope(&self, i: usize, j: usize) -> f64 {
        let n = self.steps() + 1;
        let ts: Vec<f64> = (0..n).map(|s| s as f64 * self.dt).collect();
        let qs: Vec<f64> = (0..n).map(|s| self.qv(s, i, j)).collect();
        let mt = ts.iter().sum::<f64>() / n as f64;
        let mq = qs.iter().sum::<f64>() / n as f64;
        let sxy: f64 = ts.iter().zip(&qs).map(|(t, q)| (t - mt) * (q - mq)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
        sxy / sxx
    }
}

/// `Δw̌_n = Ψ(t_n, y_n)(Δy_n - Ê[B(t_n, ·, y_n)] dt)`.
pub fn innovation_process(
    out: &FilterOutput,
    paths: &PathBundle,
    spec: &SystemSpec,
) -> Result<Innovation, ZakaiError> {
    let k = spec.k();
    let ratio = out.dt / paths.dt;
    let factor = ratio.round() as usize;
    let thinned;
    let paths = if factor > 1 {
        thinned = paths.thinned(factor);
        &thinned
    } else {
        paths
    };
    if out.obs_drift_mean.len() < out.steps() || paths.steps() < out.steps() {
        return Err(ZakaiError::Incompatible(
            "filter output lacks observation-drift means for every step".into(),
        ));
    }
    let steps = out.steps();
    let mut increments = Vec::with_capacity(steps * k);
    let mut qv = vec![0.0; (steps + 1) * k * k];
    let mut fc: Option<FilterCoefficients> = None;
    let mut w = vec![0.0; k];
    for n in 0..steps {
        let t = out.times[n];
        if fc.is_none() || !spec.is_autonomous() {
            fc = Some(assemble_filter_coefficients_with_floor(
                spec,
                t,
                paths.y_at(n),
                DEFAULT_EIGEN_FLOOR,
            )?);
        }
        let dy = paths.dy_at(n);
        let centred: Vec<f64> = dy
            .iter()
            .zip(&out.obs_drift_mean[n])
            .map(|(a, b)| a - b * out.dt)
            .collect();
        fc.as_ref().unwrap().psi_apply(&centred, &mut w);
        increments.extend_from_slice(&w);
        for i in 0..k {
            for j in 0..k {
                qv[(n + 1) * k * k + i * k + j] = qv[n * k * k + i * k + j] + w[i] * w[j];
            }
        }
    }
    Ok(Innovation {
        k,
        dt: out.dt,
        increments,
        quadratic_variation: qv,
    })
}
