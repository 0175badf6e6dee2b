use zakai_core::model::DivergenceFormSpec;
use zakai_core::rng::{Domain, Increments, StreamKey};
use zakai_core::spde_solver::{
    smooth_bump, solve, weak_residual, FieldState, Grid, SolverOptions, Trajectory,
};

fn gaussian(var: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| (-x[0] * x[0] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn heat() -> DivergenceFormSpec {
    DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 1.0).autonomous(true)
}

fn l2_error(g: &Grid, u: &FieldState, exact: impl Fn(&[f64]) -> f64) -> f64 {
    let e: f64 = (0..g.nodes())
        .map(|p| (u.values[p] - exact(&g.point(p))).powi(2))
        .sum();
    (e * g.h).sqrt()
}

fn run_heat(n: usize, dt: f64, horizon: f64) -> (Grid, Trajectory) {
    let g = Grid::new(1, 6.0, n).unwrap();
    let u0 = FieldState::from_fn(&g, 0.0, gaussian(0.25)).unwrap();
    let steps = (horizon / dt).round() as usize;
    let tr = solve(
        &heat(),
        &g,
        u0,
        &Increments::zeros(0, steps, dt),
        horizon,
        &SolverOptions {
            stride: steps,
            ..Default::default()
        },
    )
    .unwrap();
    (g, tr)
}

#[test]
fn heat_kernel_second_order_in_space() {
    let horizon = 0.1;
    let errs: Vec<f64> = [61, 121, 241]
        .iter()
        .map(|&n| {
            let (g, tr) = run_heat(n, 2e-5, horizon);
            l2_error(&g, tr.last(), gaussian(0.25 + 2.0 * horizon))
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.7..2.4).contains(&order), "{errs:?}");
    }
}

#[test]
fn heat_kernel_first_order_in_time() {
    let horizon = 0.2;
    let errs: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| {
            let (g, tr) = run_heat(1201, dt, horizon);
            l2_error(&g, tr.last(), gaussian(0.25 + 2.0 * horizon))
        })
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.8..1.25).contains(&order), "{errs:?}");
    }
}

fn variable_equation() -> DivergenceFormSpec {
    DivergenceFormSpec::new(2, 0, |_, x, a| {
        a[0] = 1.0 + 0.5 * x[0].sin();
        a[1] = 0.3 * (x[0] * x[1]).cos();
        a[2] = a[1];
        a[3] = 1.5 + 0.2 * x[1];
    })
    .autonomous(true)
}

#[test]
fn mass_is_conserved_without_lower_order_terms() {
    let g = Grid::new(2, 10.0, 81).unwrap();
    let u0 = FieldState::from_fn(&g, 0.0, |x| (-(x[0] * x[0] + x[1] * x[1]) / 0.5).exp()).unwrap();
    // the linear solve is converged far below the drift being measured
    let tr = solve(
        &variable_equation(),
        &g,
        u0,
        &Increments::zeros(0, 40, 0.005),
        0.2,
        &SolverOptions {
            tolerance: 1e-14,
            ..Default::default()
        },
    )
    .unwrap();
    let edge: f64 = (0..g.nodes())
        .filter(|p| g.boundary_distance(*p) <= 2)
        .map(|p| tr.last().values[p].abs())
        .sum();
    assert!(edge < 1e-10, "edge {edge}");
    let m0 = tr.states[0].mass(&g);
    let drift = tr
        .iter()
        .map(|s| (s.mass(&g) - m0).abs() / m0)
        .fold(0.0, f64::max);
    println!("max relative mass drift {drift:e}");
    assert!(drift <= 1e-10, "{drift:e}");
}

#[test]
fn solution_map_is_linear() {
    let g = Grid::new(1, 5.0, 101).unwrap();
    let spec = DivergenceFormSpec::new(1, 1, |_, x, a| a[0] = 1.0 + 0.3 * x[0].cos())
        .with_convection(|_, x, v| v[0] = 0.1 * x[0])
        .with_noise_gradient(|_, _, s| s[0] = 0.5)
        .with_noise_reaction(|_, x, v| v[0] = (0.5 * x[0]).sin())
        .autonomous(true);
    let dz = Increments::brownian(1, 50, 0.004, StreamKey::new(3, Domain::Driver, 0));
    let f = |x: &[f64]| (-x[0] * x[0]).exp();
    let h = |x: &[f64]| x[0] * (-(x[0] - 1.0).powi(2)).exp();
    let (alpha, beta) = (2.5, -0.75);
    let opts = SolverOptions::default();
    let run = |init: &dyn Fn(&[f64]) -> f64| {
        solve(
            &spec,
            &g,
            FieldState::from_fn(&g, 0.0, init).unwrap(),
            &dz,
            0.2,
            &opts,
        )
        .unwrap()
    };
    let a = run(&f);
    let b = run(&h);
    let c = run(&|x: &[f64]| alpha * f(x) + beta * h(x));
    let scale = c.last().max_abs();
    for p in 0..g.nodes() {
        let lin = alpha * a.last().values[p] + beta * b.last().values[p];
        assert!((c.last().values[p] - lin).abs() <= 1e-8 * scale);
    }
}

#[test]
fn undershoot_shrinks_under_refinement() {
    let spec = DivergenceFormSpec::new(2, 0, |_, _, a| a.copy_from_slice(&[1.0, 0.9, 0.9, 1.0]))
        .autonomous(true);
    let eta = |n: usize, dt: f64| {
        let g = Grid::new(2, 3.0, n).unwrap();
        let u0 =
            FieldState::from_fn(&g, 0.0, |x| (-(x[0] * x[0] + x[1] * x[1]) / 0.02).exp()).unwrap();
        let steps = (0.05 / dt).round() as usize;
        let tr = solve(
            &spec,
            &g,
            u0,
            &Increments::zeros(0, steps, dt),
            0.05,
            &SolverOptions::default(),
        )
        .unwrap();
        tr.max_undershoot()
    };
    let coarse = eta(31, 0.01);
    let fine = eta(61, 0.005);
    assert!(coarse > 0.0);
    assert!(fine <= coarse, "{fine} > {coarse}");
}

#[test]
fn time_refinement_differences_halve() {
    let g = Grid::new(1, 5.0, 201).unwrap();
    let spec = DivergenceFormSpec::new(1, 0, |_, x, a| a[0] = 1.0 + 0.5 * x[0].sin())
        .with_reaction(|_, x| -0.5 * x[0].cos().powi(2))
        .autonomous(true);
    let at = |dt: f64| {
        let u0 = FieldState::from_fn(&g, 0.0, gaussian(0.3)).unwrap();
        let steps = (0.1 / dt).round() as usize;
        solve(
            &spec,
            &g,
            u0,
            &Increments::zeros(0, steps, dt),
            0.1,
            &SolverOptions::default(),
        )
        .unwrap()
        .last()
        .clone()
    };
    let (u1, u2, u3) = (at(0.02), at(0.01), at(0.005));
    let diff = |a: &FieldState, b: &FieldState| -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let ratio = diff(&u1, &u2) / diff(&u2, &u3);
    assert!((1.6..2.5).contains(&ratio), "{ratio}");
}

#[test]
fn weak_residual_decays_under_refinement() {
    let spec = DivergenceFormSpec::new(1, 1, |_, x, a| a[0] = 1.0 + 0.3 * x[0].cos())
        .with_noise_gradient(|_, _, s| s[0] = 0.4)
        .with_noise_reaction(|_, x, v| v[0] = 0.2 * x[0])
        .autonomous(true);
    let fine = Increments::brownian(
        1,
        1600,
        0.25 / 1600.0,
        StreamKey::new(12, Domain::Driver, 0),
    );
    let phi = smooth_bump(vec![0.2], 2.5);
    let mut res = Vec::new();
    for (n, factor) in [(81, 16), (161, 4), (321, 1)] {
        let g = Grid::new(1, 5.0, n).unwrap();
        let dz = fine.coarsen(factor);
        let u0 = FieldState::from_fn(&g, 0.0, gaussian(0.5)).unwrap();
        let tr = solve(&spec, &g, u0, &dz, 0.25, &SolverOptions::default()).unwrap();
        res.push(weak_residual(&tr, &phi, &spec, &dz).unwrap().max_abs);
    }
    assert!(res[1] < res[0] && res[2] < res[1], "{res:?}");
    assert!(res[2] < 1e-2, "{res:?}");
}

#[test]
fn pure_noise_strong_order_one_half() {
    let g = Grid::new(1, 1.0, 3).unwrap();
    let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 0.0)
        .with_noise_reaction(|_, _, v| v[0] = 1.0)
        .autonomous(true);
    let fine = 1024;
    let levels = [3usize, 5, 7];
    let mut err = [0.0; 3];
    let paths = 400;
    for r in 0..paths {
        let dz = Increments::brownian(
            1,
            fine,
            1.0 / fine as f64,
            StreamKey::new(21, Domain::Driver, r),
        );
        let z: f64 = dz.as_slice().iter().sum();
        let exact = (z - 0.5).exp();
        for (e, l) in err.iter_mut().zip(levels) {
            let coarse = dz.coarsen(fine >> l);
            let u0 = FieldState::from_fn(&g, 0.0, |_| 1.0).unwrap();
            let tr = solve(
                &spec,
                &g,
                u0,
                &coarse,
                1.0,
                &SolverOptions {
                    stride: 1 << l,
                    ..Default::default()
                },
            )
            .unwrap();
            *e += (tr.last().values[1] - exact).abs() / paths as f64;
        }
    }
    let slope = (err[0] / err[2]).log2() / 4.0;
    assert!((slope - 0.5).abs() <= 0.15, "{slope} {err:?}");
}
