use rayon::prelude::*;

use super::assemble::{assemble_forcing, assemble_operator, ForcingSnapshot, OperatorStencil};
use super::grid::Grid;
use super::sparse::{bicgstab, Csr};
use super::{Scheme, SolverError, SolverOptions};
use crate::linalg::exact_sum;
use crate::model::DivergenceFormSpec;
use crate::rng::Increments;
use crate::sde_sim::step_count;

/// Nodal values at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub values: Vec<f64>,
    pub t: f64,
    /// Boundary nodes are held at zero.
    pub dirichlet: bool,
}

impl FieldState {
    /// Checks finiteness and zeroes the boundary layer.
    pub fn new(grid: &Grid, mut values: Vec<f64>, t: f64) -> Result<Self, SolverError> {
        if values.len() != grid.nodes() {
            return Err(SolverError::Dimension(format!(
                "{} values for {} nodes",
                values.len(),
                grid.nodes()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite {
                what: "initial field",
                point: grid.point(p),
            });
        }
        for (p, v) in values.iter_mut().enumerate() {
            if grid.is_boundary(p) {
                *v = 0.0;
            }
        }
        Ok(Self {
            values,
            t,
            dirichlet: true,
        })
    }

    pub fn from_fn(grid: &Grid, t: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self, SolverError> {
        Self::new(grid, grid.sample(f), t)
    }

    /// `Σ u h^d`, summed exactly.
    pub fn mass(&self, grid: &Grid) -> f64 {
        exact_sum(self.values.iter().cloned()) * grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `I - dt L` for the stencil at the end of a step.
#[derive(Clone, Debug)]
pub struct ImplicitMatrix {
    pub t: f64,
    pub dt: f64,
    pub a: Csr,
}

impl ImplicitMatrix {
    pub fn new(next: &OperatorStencil, dt: f64) -> Self {
        Self {
            t: next.t,
            dt,
            a: next.l.identity_minus(dt),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
    /// `dt · max_node Σ_k ‖Λ^k row‖₁²`.
    pub cfl: f64,
    pub cfl_warning: bool,
    /// `max(0, -min u)` before any clipping.
    pub undershoot: f64,
}

fn add_noise(
    now: &OperatorStencil,
    forcing: &ForcingSnapshot,
    u: &[f64],
    dz: &[f64],
    out: &mut [f64],
) {
    for (k, (lam, z)) in now.noise.iter().zip(dz).enumerate() {
        if *z == 0.0 {
            continue;
        }
        let g = forcing.noise.as_ref().map(|g| &g[k]);
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let mut v = lam.row_dot(p, u);
            if let Some(g) = g {
                v += g[p];
            }
            *o += v * z;
        });
    }
}

fn add_drift_forcing(forcing: &ForcingSnapshot, dt: f64, out: &mut [f64]) {
    for src in [&forcing.divergence, &forcing.source].into_iter().flatten() {
        out.iter_mut().zip(src).for_each(|(o, f)| *o += dt * f);
    }
}

fn implicit_solve(
    implicit: &ImplicitMatrix,
    rhs: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, usize, f64), SolverError> {
    let mut x = rhs.to_vec();
    let st = bicgstab(
        &implicit.a,
        rhs,
        &mut x,
        opts.tolerance,
        opts.max_iterations,
    );
    if !st.converged {
        return Err(SolverError::SolverDiverged {
            iterations: st.iterations,
            residual: st.relative_residual,
        });
    }
    Ok((x, st.iterations, st.relative_residual))
}

/// One step from `state.t` to `state.t + dt`: `now` supplies the noise
/// operators at the left point, `implicit` the operator at the right point.
pub fn step(
    state: &FieldState,
    now: &OperatorStencil,
    implicit: &ImplicitMatrix,
    forcing: &ForcingSnapshot,
    dz: &[f64],
    opts: &SolverOptions,
) -> Result<(FieldState, StepReport), SolverError> {
    let grid = &now.grid;
    let dt = implicit.dt;
    if !(dt > 0.0) {
        return Err(SolverError::Input(format!("dt = {dt} must be positive")));
    }
    if dz.len() != now.noise.len() {
        return Err(SolverError::Dimension(format!(
            "{} increments for {} noise channels",
            dz.len(),
            now.noise.len()
        )));
    }
    if dz.iter().any(|z| !z.is_finite()) {
        return Err(SolverError::Input("non-finite noise increment".into()));
    }
    let cfl = dt * now.noise_norm2;
    let cfl_warning = cfl > opts.c_stab;
    if cfl_warning {
        log::warn!(
            "explicit noise bound dt·max Σ|Λ row|² = {cfl:.3e} exceeds c_stab = {} at t = {}",
            opts.c_stab,
            state.t
        );
    }
    let u = &state.values;
    let (mut next, iterations, residual) = match opts.scheme {
        Scheme::Imex => {
            let mut rhs = u.clone();
            add_drift_forcing(forcing, dt, &mut rhs);
            add_noise(now, forcing, u, dz, &mut rhs);
            zero_boundary(grid, &mut rhs);
            implicit_solve(implicit, &rhs, opts)?
        }
        Scheme::LieSplitting => {
            let mut rhs = u.clone();
            add_drift_forcing(forcing, dt, &mut rhs);
            zero_boundary(grid, &mut rhs);
            let (v, it, res) = implicit_solve(implicit, &rhs, opts)?;
            let mut w = v.clone();
            add_noise(now, forcing, &v, dz, &mut w);
            zero_boundary(grid, &mut w);
            (w, it, res)
        }
    };
    if let Some(p) = next.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite {
            what: "solution",
            point: grid.point(p),
        });
    }
    let before = state.max_abs();
    let after = next.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if before > 0.0 && after / before > opts.growth_limit {
        return Err(SolverError::Instability {
            growth: after / before,
            t: state.t + dt,
        });
    }
    let undershoot = (-next.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0);
    if opts.clip && undershoot > 0.0 {
        let total = exact_sum(next.iter().cloned());
        next.iter_mut().for_each(|v| *v = v.max(0.0));
        let kept = exact_sum(next.iter().cloned());
        if kept > 0.0 && total > 0.0 {
            let s = total / kept;
            next.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok((
        FieldState {
            values: next,
            t: state.t + dt,
            dirichlet: true,
        },
        StepReport {
            iterations,
            residual,
            cfl,
            cfl_warning,
            undershoot,
        },
    ))
}

fn zero_boundary(grid: &Grid, v: &mut [f64]) {
    for (p, x) in v.iter_mut().enumerate() {
        if grid.is_boundary(p) {
            *x = 0.0;
        }
    }
}

/// Recorded states of a run. `steps[i]` is the step index of `states[i]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    pub options: SolverOptions,
    pub steps: Vec<usize>,
    pub states: Vec<FieldState>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    pub fn new(grid: Grid, dt: f64, options: SolverOptions, u0: FieldState) -> Self {
        Self {
            grid,
            dt,
            options,
            steps: vec![0],
            states: vec![u0],
            reports: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&FieldState> {
        self.states.get(i)
    }

    pub fn last(&self) -> &FieldState {
        self.states.last().expect("trajectory holds u0")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FieldState> {
        self.states.iter()
    }

    pub fn cfl_warnings(&self) -> usize {
        self.reports.iter().filter(|r| r.cfl_warning).count()
    }

    pub fn max_undershoot(&self) -> f64 {
        self.reports
            .iter()
            .map(|r| r.undershoot)
            .fold(0.0, f64::max)
    }

    /// Appends the state reached after `step_index` steps if it falls on the
    /// stride or is the final one.
    pub fn record(
        &mut self,
        step_index: usize,
        state: &FieldState,
        report: StepReport,
        last: bool,
    ) {
        self.reports.push(report);
        if step_index % self.options.stride.max(1) == 0 || last {
            self.steps.push(step_index);
            self.states.push(state.clone());
        }
    }
}

/// Runs the scheme on `[0, T]` with increments taken from `driver`, whose
/// step size sets `dt`.
pub fn solve(
    spec: &DivergenceFormSpec,
    grid: &Grid,
    u0: FieldState,
    driver: &Increments,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<Trajectory, SolverError> {
    let dt = driver.dt();
    let steps = step_count(horizon, dt).map_err(|e| SolverError::Input(e.to_string()))?;
    if spec.channels > 0 && driver.steps() < steps {
        return Err(SolverError::Input(format!(
            "driver has {} increments, horizon needs {steps}",
            driver.steps()
        )));
    }
    if spec.channels > 0 && driver.channels() != spec.channels {
        return Err(SolverError::Dimension(format!(
            "driver has {} channels, equation has {}",
            driver.channels(),
            spec.channels
        )));
    }
    if u0.values.len() != grid.nodes() {
        return Err(SolverError::Dimension(
            "initial field does not match grid".into(),
        ));
    }
    let u0 = FieldState::new(grid, u0.values, u0.t)?;
    let t0 = u0.t;
    let mut traj = Trajectory::new(*grid, dt, opts.clone(), u0);
    if steps == 0 {
        return Ok(traj);
    }
    let no_noise = vec![0.0; spec.channels];
    let mut now = assemble_operator(spec, grid, t0, opts.memory_budget)?;
    let mut forcing = assemble_forcing(spec, grid, t0)?;
    let fixed = spec.autonomous.then(|| ImplicitMatrix::new(&now, dt));
    let mut state = traj.states[0].clone();
    for n in 0..steps {
        let t_next = t0 + (n + 1) as f64 * dt;
        let dz = if spec.channels > 0 {
            driver.step(n)
        } else {
            &no_noise[..]
        };
        let next = match fixed {
            Some(_) => None,
            None => Some(assemble_operator(spec, grid, t_next, opts.memory_budget)?),
        };
        let owned;
        let imp = match (&fixed, &next) {
            (Some(f), _) => f,
            (None, Some(s)) => {
                owned = ImplicitMatrix::new(s, dt);
                &owned
            }
            (None, None) => unreachable!(),
        };
        let (mut s, rep) = step(&state, &now, imp, &forcing, dz, opts)?;
        s.t = t_next;
        state = s;
        if let Some(next) = next {
            now = next;
            if spec.has_forcing() {
                forcing = assemble_forcing(spec, grid, t_next)?;
            }
        }
        traj.record(n + 1, &state, rep, n + 1 == steps);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};

    fn heat() -> DivergenceFormSpec {
        DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 1.0).autonomous(true)
    }

    #[test]
    fn empty_horizon_returns_initial_state() {
        let g = Grid::new(1, 1.0, 11).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| 1.0 - x[0] * x[0]).unwrap();
        let dz = Increments::zeros(0, 0, 0.1);
        let tr = solve(&heat(), &g, u0.clone(), &dz, 0.0, &SolverOptions::default()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.states[0], u0);
    }

    #[test]
    fn pure_source_adds_dt() {
        let g = Grid::new(1, 1.0, 11).unwrap();
        let spec = DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 0.0)
            .with_source(|_, _| 1.0)
            .autonomous(true);
        let u0 = FieldState::from_fn(&g, 0.0, |x| x[0].cos()).unwrap();
        let dz = Increments::zeros(0, 3, 0.1);
        let tr = solve(&spec, &g, u0.clone(), &dz, 0.1, &SolverOptions::default()).unwrap();
        let u1 = &tr.states[1];
        for p in 1..10 {
            assert!((u1.values[p] - (u0.values[p] + 0.1)).abs() < 1e-14);
        }
        assert_eq!(u1.values[0], 0.0);
    }

    #[test]
    fn pure_noise_is_geometric() {
        let g = Grid::new(1, 1.0, 7).unwrap();
        let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 0.0)
            .with_noise_reaction(|_, _, v| v[0] = 1.0)
            .autonomous(true);
        let u0 = FieldState::from_fn(&g, 0.0, |_| 2.0).unwrap();
        let dz = Increments::brownian(1, 50, 0.02, StreamKey::new(1, Domain::Driver, 0));
        let tr = solve(&spec, &g, u0, &dz, 1.0, &SolverOptions::default()).unwrap();
        let mut v = 2.0;
        for n in 0..50 {
            v *= 1.0 + dz.step(n)[0];
            assert!((tr.states[n + 1].values[3] - v).abs() < 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn runs_are_bitwise_reproducible_and_strided() {
        let g = Grid::new(1, 2.0, 41).unwrap();
        let spec = DivergenceFormSpec::new(1, 1, |_, x, a| a[0] = 1.0 + 0.5 * x[0].sin())
            .with_noise_gradient(|_, _, s| s[0] = 0.3)
            .with_noise_reaction(|_, x, v| v[0] = x[0]);
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let dz = Increments::brownian(1, 20, 0.005, StreamKey::new(4, Domain::Driver, 0));
        let opts = SolverOptions {
            stride: 3,
            ..Default::default()
        };
        let a = solve(&spec, &g, u0.clone(), &dz, 0.1, &opts).unwrap();
        let b = solve(&spec, &g, u0, &dz, 0.1, &opts).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.steps, vec![0, 3, 6, 9, 12, 15, 18, 20]);
        assert_eq!(a.reports.len(), 20);
    }

    #[test]
    fn clipping_keeps_the_sum() {
        let g = Grid::new(1, 1.0, 21).unwrap();
        let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 0.01)
            .with_noise_gradient(|_, _, s| s[0] = 1.0)
            .autonomous(true);
        let u0 =
            FieldState::from_fn(&g, 0.0, |x| if x[0].abs() < 0.05 { 1.0 } else { 0.0 }).unwrap();
        let dz = Increments::from_raw(1, 0.01, vec![0.5]);
        let plain = solve(&spec, &g, u0.clone(), &dz, 0.01, &SolverOptions::default()).unwrap();
        assert!(plain.max_undershoot() > 0.0);
        let opts = SolverOptions {
            clip: true,
            ..Default::default()
        };
        let clipped = solve(&spec, &g, u0, &dz, 0.01, &opts).unwrap();
        let last = clipped.last();
        assert!(last.min() >= 0.0);
        assert!((last.mass(&g) - plain.last().mass(&g)).abs() < 1e-12);
    }

    #[test]
    fn growth_limit_and_iteration_cap() {
        let g = Grid::new(1, 1.0, 11).unwrap();
        let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 0.0)
            .with_noise_reaction(|_, _, v| v[0] = 1.0)
            .autonomous(true);
        let u0 = FieldState::from_fn(&g, 0.0, |_| 1.0).unwrap();
        let dz = Increments::from_raw(1, 0.1, vec![5000.0]);
        assert!(matches!(
            solve(&spec, &g, u0.clone(), &dz, 0.1, &SolverOptions::default()),
            Err(SolverError::Instability { .. })
        ));
        let g = Grid::new(1, 1.0, 201).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (7.0 * x[0]).sin() + x[0]).unwrap();
        let stiff = DivergenceFormSpec::new(1, 0, |_, x, a| a[0] = 1.0 + 100.0 * x[0].abs())
            .autonomous(true);
        let opts = SolverOptions {
            max_iterations: 1,
            tolerance: 1e-15,
            ..Default::default()
        };
        let dz = Increments::zeros(0, 1, 1.0);
        assert!(matches!(
            solve(&stiff, &g, u0, &dz, 1.0, &opts),
            Err(SolverError::SolverDiverged { .. })
        ));
    }
}
