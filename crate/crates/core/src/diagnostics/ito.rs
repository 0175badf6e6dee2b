use rayon::prelude::*;
use serde::Serialize;

use super::terms::evaluate_trajectory;
use super::{fit_slope, DiagnosticsError};
use crate::model::DivergenceFormSpec;
use crate::rng::Increments;
use crate::spde_solver::{solve, FieldState, Grid, SolverOptions, Trajectory};

/// Default cap on `p`; the weight `|u|^{p-2}` makes quadrature noisy beyond it.
pub const MAX_EXPONENT: f64 = 8.0;

/// Both sides of the Itô identity for `‖u_t‖_p^p` at the recorded times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoReport {
    pub p: f64,
    pub times: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub stochastic: Vec<f64>,
    pub drift: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// Filled in by [`ito_refinement`].
    pub slope: Option<f64>,
}

pub(crate) fn check_alignment(
    traj: &Trajectory,
    spec: &DivergenceFormSpec,
    driver: &Increments,
) -> Result<(), DiagnosticsError> {
    if spec.d != traj.grid.d {
        return Err(DiagnosticsError::MisalignedGrids(format!(
            "equation in dimension {}, grid in dimension {}",
            spec.d, traj.grid.d
        )));
    }
    if spec.channels == 0 {
        return Ok(());
    }
    if driver.channels() != spec.channels {
        return Err(DiagnosticsError::MisalignedGrids(format!(
            "driver has {} channels, equation has {}",
            driver.channels(),
            spec.channels
        )));
    }
    if (driver.dt() - traj.dt).abs() > 1e-12 * traj.dt {
        return Err(DiagnosticsError::MisalignedGrids(format!(
            "driver step {} differs from solver step {}",
            driver.dt(),
            traj.dt
        )));
    }
    let last = *traj.steps.last().unwrap_or(&0);
    if driver.steps() < last {
        return Err(DiagnosticsError::MisalignedGrids(format!(
            "driver has {} increments, trajectory needs {last}",
            driver.steps()
        )));
    }
    Ok(())
}

/// Itô identity residual with the default cap on `p`.
pub fn ito_residual(
    traj: &Trajectory,
    spec: &DivergenceFormSpec,
    driver: &Increments,
    p: f64,
) -> Result<ItoReport, DiagnosticsError> {
    ito_residual_capped(traj, spec, driver, p, MAX_EXPONENT)
}

/// Left-point sums in time over the recorded states; driver increments are
/// summed across the recording stride.
pub fn ito_residual_capped(
    traj: &Trajectory,
    spec: &DivergenceFormSpec,
    driver: &Increments,
    p: f64,
    cap: f64,
) -> Result<ItoReport, DiagnosticsError> {
    if !(2.0..=cap).contains(&p) {
        return Err(DiagnosticsError::Exponent { p, cap });
    }
    check_alignment(traj, spec, driver)?;
    let terms = evaluate_trajectory(traj, spec, p)?;
    let n = terms.len();
    let mut stochastic = vec![0.0; n];
    let mut drift = vec![0.0; n];
    for i in 0..n - 1 {
        let span = (traj.steps[i + 1] - traj.steps[i]) as f64 * traj.dt;
        let mut s = 0.0;
        for (k, v) in terms[i].noise.iter().enumerate() {
            let dz: f64 = (traj.steps[i]..traj.steps[i + 1])
                .map(|m| driver.step(m)[k])
                .sum();
            s += v * dz;
        }
        stochastic[i + 1] = stochastic[i] + s;
        drift[i + 1] = drift[i] + terms[i].drift * span;
    }
    let lhs: Vec<f64> = terms.iter().map(|t| t.lp).collect();
    let rhs: Vec<f64> = (0..n).map(|i| lhs[0] + stochastic[i] + drift[i]).collect();
    let residual: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let max_residual = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(ItoReport {
        p,
        times: traj.times().collect(),
        lhs,
        rhs,
        stochastic,
        drift,
        residual,
        max_residual,
        slope: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoRefinement {
    pub dts: Vec<f64>,
    /// `max_t |residual|` per level, averaged over the drivers.
    pub max_residuals: Vec<f64>,
    /// Per driver, per level.
    pub replica_residuals: Vec<Vec<f64>>,
    /// Slope of `log max|residual|` against `log dt`; absent when a residual
    /// vanishes.
    pub slope: Option<f64>,
    /// Finest level of the first driver.
    pub finest: ItoReport,
}

/// Solves on `dt·2^j`, `j = levels-1, …, 0`, from each fine driver
/// (coarsened by summation) and fits the order of the mean residual.
/// A single driver gives the pathwise order, which is noisy.
#[allow(clippy::too_many_arguments)]
pub fn ito_refinement(
    spec: &DivergenceFormSpec,
    grid: &Grid,
    u0: &FieldState,
    drivers: &[Increments],
    horizon: f64,
    opts: &SolverOptions,
    p: f64,
    levels: usize,
) -> Result<ItoRefinement, DiagnosticsError> {
    if levels < 2 {
        return Err(DiagnosticsError::Input("need at least two levels".into()));
    }
    if drivers.is_empty() {
        return Err(DiagnosticsError::Input("need at least one driver".into()));
    }
    let runs: Vec<(Vec<f64>, Vec<f64>, ItoReport)> = drivers
        .par_iter()
        .map(|driver| {
            let mut dts = Vec::new();
            let mut res = Vec::new();
            let mut finest = None;
            for j in (0..levels).rev() {
                let factor = 1usize << j;
                let drv = if factor == 1 {
                    driver.clone()
                } else {
                    driver.coarsen(factor)
                };
                let traj = solve(spec, grid, u0.clone(), &drv, horizon, opts)?;
                let rep = ito_residual(&traj, spec, &drv, p)?;
                dts.push(drv.dt());
                res.push(rep.max_residual);
                finest = Some(rep);
            }
            Ok((dts, res, finest.unwrap()))
        })
        .collect::<Result<_, DiagnosticsError>>()?;
    let dts = runs[0].0.clone();
    let replica_residuals: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let max_residuals: Vec<f64> = (0..levels)
        .map(|l| replica_residuals.iter().map(|r| r[l]).sum::<f64>() / drivers.len() as f64)
        .collect();
    let slope = if max_residuals.iter().all(|r| *r > 0.0) {
        let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = max_residuals.iter().map(|r| r.ln()).collect();
        Some(fit_slope(&xs, &ys).0)
    } else {
        None
    };
    let mut finest = runs.into_iter().next().unwrap().2;
    finest.slope = slope;
    Ok(ItoRefinement {
        dts,
        max_residuals,
        replica_residuals,
        slope,
        finest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};
    use crate::spde_solver::assemble_operator;
    use crate::spde_solver::sparse::dot as sparse_dot;

    fn heat_with_drift() -> DivergenceFormSpec {
        DivergenceFormSpec::new(1, 0, |_, x, a| a[0] = 1.0 + 0.3 * x[0].sin())
            .with_convection(|_, x, v| v[0] = 0.2 * x[0].cos())
            .with_drift(|_, x, b| b[0] = -0.3 * x[0])
            .with_reaction(|_, x| -0.1 * x[0] * x[0])
            .autonomous(true)
    }

    #[test]
    fn zero_solution_has_zero_residual() {
        let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 1.0)
            .with_noise_reaction(|_, _, v| v[0] = 1.0)
            .autonomous(true);
        let g = Grid::new(1, 4.0, 41).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |_| 0.0).unwrap();
        let dz = Increments::brownian(1, 20, 0.01, StreamKey::new(1, Domain::Driver, 0));
        let tr = solve(&spec, &g, u0, &dz, 0.2, &SolverOptions::default()).unwrap();
        for p in [2.0, 4.0] {
            let r = ito_residual(&tr, &spec, &dz, p).unwrap();
            assert_eq!(r.max_residual, 0.0);
            assert!(r.lhs.iter().chain(&r.rhs).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn energy_identity_matches_direct_computation() {
        let spec = heat_with_drift();
        let g = Grid::new(1, 6.0, 121).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let dz = Increments::zeros(0, 50, 2e-3);
        let tr = solve(&spec, &g, u0, &dz, 0.1, &SolverOptions::default()).unwrap();
        let rep = ito_residual(&tr, &spec, &dz, 2.0).unwrap();

        // ‖u_n‖² - ‖u_0‖² - Σ 2 dt ⟨u_m, L u_m⟩ with L applied as one matrix
        let st = assemble_operator(&spec, &g, 0.0, usize::MAX).unwrap();
        let vol = g.cell_volume();
        let mut acc = 0.0;
        let e0 = sparse_dot(&tr.states[0].values, &tr.states[0].values) * vol;
        for (i, s) in tr.states.iter().enumerate() {
            let e = sparse_dot(&s.values, &s.values) * vol;
            let direct = e - e0 - acc;
            assert!(
                (direct - rep.residual[i]).abs() <= 1e-10,
                "{i}: {direct} vs {}",
                rep.residual[i]
            );
            acc += 2.0 * tr.dt * sparse_dot(&s.values, &st.l.apply_new(&s.values)) * vol;
        }
    }

    #[test]
    fn rejects_exponent_and_misalignment() {
        let spec = heat_with_drift();
        let g = Grid::new(1, 2.0, 21).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (1.0 - x[0] * x[0] / 4.0).max(0.0)).unwrap();
        let dz = Increments::zeros(0, 5, 0.01);
        let tr = solve(&spec, &g, u0, &dz, 0.05, &SolverOptions::default()).unwrap();
        assert!(matches!(
            ito_residual(&tr, &spec, &dz, 1.5),
            Err(DiagnosticsError::Exponent { .. })
        ));
        assert!(matches!(
            ito_residual(&tr, &spec, &dz, 9.0),
            Err(DiagnosticsError::Exponent { .. })
        ));
        let noisy = spec.clone().with_noise_reaction(|_, _, v| v[0] = 1.0);
        let noisy = DivergenceFormSpec {
            channels: 1,
            ..noisy
        };
        let short = Increments::zeros(1, 2, 0.01);
        assert!(matches!(
            ito_residual(&tr, &noisy, &short, 2.0),
            Err(DiagnosticsError::MisalignedGrids(_))
        ));
    }

    #[test]
    fn deterministic_residual_is_first_order() {
        let spec = heat_with_drift();
        let g = Grid::new(1, 6.0, 61).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let dz = Increments::zeros(0, 200, 1e-3);
        let r = ito_refinement(
            &spec,
            &g,
            &u0,
            std::slice::from_ref(&dz),
            0.2,
            &SolverOptions::default(),
            2.0,
            3,
        )
        .unwrap();
        let s = r.slope.unwrap();
        assert!(s >= 0.9, "{s} {:?}", r.max_residuals);
    }
}
