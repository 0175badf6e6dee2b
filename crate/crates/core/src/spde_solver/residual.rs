use super::assemble::{assemble_forcing, assemble_operator};
use super::step::Trajectory;
use super::SolverError;
use crate::model::DivergenceFormSpec;
use crate::rng::Increments;

/// `R(t)` at the recorded times and its maximum modulus.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakResidual {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max_abs: f64,
}

/// `exp(-1/(1 - r²))` with `r = |x - c| / radius`, zero for `r ≥ 1`.
pub fn smooth_bump(center: Vec<f64>, radius: f64) -> impl Fn(&[f64]) -> f64 + Send + Sync {
    move |x: &[f64]| {
        let r2 = x
            .iter()
            .zip(&center)
            .map(|(a, c)| ((a - c) / radius).powi(2))
            .sum::<f64>();
        if r2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - r2)).exp()
        }
    }
}

/// Residual of the weak form tested against `phi`, with left-point
/// rectangle sums in time and the face-flux (adjoint) form of the
/// divergence terms. Increments of `driver` are summed across the stride.
pub fn weak_residual(
    traj: &Trajectory,
    phi: &dyn Fn(&[f64]) -> f64,
    spec: &DivergenceFormSpec,
    driver: &Increments,
) -> Result<WeakResidual, SolverError> {
    let grid = &traj.grid;
    let h = grid.h;
    let vol = grid.cell_volume();
    let nodes = grid.nodes();
    let phi_v = grid.sample(phi);
    for (p, v) in phi_v.iter().enumerate() {
        if *v != 0.0 && grid.boundary_distance(p) < 2 {
            return Err(SolverError::SupportViolation {
                point: grid.point(p),
                value: *v,
            });
        }
    }
    let last_step = *traj.steps.last().unwrap_or(&0);
    if spec.channels > 0 && last_step > 0 && driver.steps() < last_step {
        return Err(SolverError::Input(
            "driver is shorter than the trajectory".into(),
        ));
    }
    // Dφ on faces (p, p + e_j)
    let dphi: Vec<Vec<f64>> = (0..grid.d)
        .map(|j| {
            let s = grid.stride(j);
            (0..nodes)
                .map(|p| {
                    if grid.multi_index(p)[j] + 1 < grid.n {
                        (phi_v[p + s] - phi_v[p]) / h
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let pair = |u: &[f64]| -> f64 { u.iter().zip(&phi_v).map(|(a, b)| a * b).sum::<f64>() * vol };

    let mut stencil = None;
    let mut forcing = None;
    let base = pair(&traj.states[0].values);
    let mut integral = 0.0;
    let mut values = vec![0.0];
    for i in 0..traj.len() - 1 {
        let u = &traj.states[i].values;
        let t = traj.states[i].t;
        if stencil.is_none() || !spec.autonomous {
            stencil = Some(assemble_operator(
                spec,
                grid,
                t,
                traj.options.memory_budget,
            )?);
            forcing = Some(assemble_forcing(spec, grid, t)?);
        }
        let st = stencil.as_ref().unwrap();
        let fo = forcing.as_ref().unwrap();
        let span = (traj.steps[i + 1] - traj.steps[i]) as f64 * traj.dt;

        let lower = st.lower.apply_new(u);
        let mut drift: f64 = (0..nodes)
            .map(|p| phi_v[p] * (lower[p] + fo.source.as_ref().map_or(0.0, |f| f[p])))
            .sum();
        for (j, flux) in st.fluxes.iter().enumerate() {
            let fu = flux.apply_new(u);
            let ff = fo.face_flux.as_ref().map(|f| &f[j]);
            drift -= (0..nodes)
                .map(|p| (fu[p] + ff.map_or(0.0, |f| f[p])) * dphi[j][p])
                .sum::<f64>();
        }
        let mut noise = 0.0;
        for (k, lam) in st.noise.iter().enumerate() {
            let dz: f64 = (traj.steps[i]..traj.steps[i + 1])
                .map(|n| driver.step(n)[k])
                .sum();
            let lu = lam.apply_new(u);
            let g = fo.noise.as_ref().map(|g| &g[k]);
            let inner: f64 = (0..nodes)
                .map(|p| phi_v[p] * (lu[p] + g.map_or(0.0, |g| g[p])))
                .sum();
            noise += inner * dz;
        }
        integral += (drift * span + noise) * vol;
        values.push(pair(&traj.states[i + 1].values) - base - integral);
    }
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(WeakResidual {
        times: traj.times().collect(),
        values,
        max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};
    use crate::spde_solver::{solve, FieldState, Grid, SolverOptions};

    fn equation() -> DivergenceFormSpec {
        DivergenceFormSpec::new(1, 1, |_, x, a| a[0] = 1.0 + 0.5 * x[0].cos())
            .with_convection(|_, x, v| v[0] = 0.2 * x[0])
            .with_noise_gradient(|_, _, s| s[0] = 0.4)
            .with_noise_reaction(|_, x, v| v[0] = 0.3 * x[0].sin())
            .autonomous(true)
    }

    #[test]
    fn zero_solution_has_zero_residual() {
        let g = Grid::new(1, 4.0, 41).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |_| 0.0).unwrap();
        let dz = Increments::brownian(1, 10, 0.01, StreamKey::new(2, Domain::Driver, 0));
        let tr = solve(&equation(), &g, u0, &dz, 0.1, &SolverOptions::default()).unwrap();
        let r = weak_residual(&tr, &smooth_bump(vec![0.0], 2.0), &equation(), &dz).unwrap();
        assert_eq!(r.max_abs, 0.0);
    }

    #[test]
    fn support_must_stay_off_the_boundary() {
        let g = Grid::new(1, 1.0, 21).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |_| 0.0).unwrap();
        let dz = Increments::zeros(1, 1, 0.1);
        let tr = solve(&equation(), &g, u0, &dz, 0.1, &SolverOptions::default()).unwrap();
        assert!(matches!(
            weak_residual(&tr, &smooth_bump(vec![0.0], 0.95), &equation(), &dz),
            Err(SolverError::SupportViolation { .. })
        ));
    }

    #[test]
    fn single_node_perturbation_shifts_by_phi_h() {
        let g = Grid::new(1, 4.0, 81).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let dz = Increments::brownian(1, 20, 0.005, StreamKey::new(9, Domain::Driver, 0));
        let tr = solve(&equation(), &g, u0, &dz, 0.1, &SolverOptions::default()).unwrap();
        let phi = smooth_bump(vec![0.3], 2.5);
        let base = weak_residual(&tr, &phi, &equation(), &dz).unwrap();
        let mut bumped = tr.clone();
        let node = 43;
        bumped.states[7].values[node] += 1.0;
        let r = weak_residual(&bumped, &phi, &equation(), &dz).unwrap();
        let jump = r.values[7] - base.values[7];
        let want = phi(&g.point(node)) * g.h;
        assert!((jump - want).abs() < 1e-12, "{jump} vs {want}");
        assert_eq!(r.values[..7], base.values[..7]);
    }
}
