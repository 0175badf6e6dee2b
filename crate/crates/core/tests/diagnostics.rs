use zakai_core::diagnostics::{
    apriori_bound_check, calibrate_constant, continuous_dependence_study, holder_exponents,
    ito_refinement, HolderOptions, APRIORI_CONSTANT,
};
use zakai_core::model::families::{kink, KinkParams};
use zakai_core::model::DivergenceFormSpec;
use zakai_core::rng::{Domain, Increments, StreamKey};
use zakai_core::spde_solver::{solve, FieldState, Grid, SolverOptions};

fn kinked(noise: f64) -> DivergenceFormSpec {
    kink(&KinkParams {
        base: 1.0,
        slope: 0.5,
        convection: 0.2,
        noise_gradient: noise,
        noise_reaction: 0.5,
        bound: 10.0,
        delta: 0.5,
    })
}

fn bump(g: &Grid) -> FieldState {
    FieldState::from_fn(g, 0.0, |x| (-2.0 * x[0] * x[0]).exp()).unwrap()
}

#[test]
fn ito_residual_order_on_noisy_run() {
    let spec = kinked(0.4);
    let g = Grid::new(1, 6.0, 121).unwrap();
    let dz = Increments::brownian(1, 2000, 2.5e-4, StreamKey::new(17, Domain::Driver, 0));
    for p in [2.0, 4.0] {
        let r = ito_refinement(
            &spec,
            &g,
            &bump(&g),
            std::slice::from_ref(&dz),
            0.5,
            &SolverOptions::default(),
            p,
            3,
        )
        .unwrap();
        let s = r.slope.unwrap();
        println!("p = {p}: residuals {:?}, slope {s}", r.max_residuals);
        assert!(s >= 0.4, "p = {p}: slope {s}");
    }
}

#[test]
fn kink_dependence_decreases() {
    let spec = kinked(0.3);
    let g = Grid::new(1, 6.0, 241).unwrap();
    let dz = Increments::brownian(1, 400, 1e-3, StreamKey::new(3, Domain::Driver, 0));
    let r = continuous_dependence_study(
        &spec,
        &[0.4, 0.2, 0.1, 0.05],
        &g,
        &bump(&g),
        &dz,
        0.4,
        &SolverOptions::default(),
        2.0,
        24,
    )
    .unwrap();
    for e in &r.entries {
        println!("{e:?}");
    }
    assert!(r.decreasing);
}

#[test]
fn apriori_margin_holds_across_calibration_suite() {
    let g = Grid::new(1, 6.0, 121).unwrap();
    let mut reports = Vec::new();
    for (i, noise) in [0.0, 0.2, 0.4, 0.6].iter().enumerate() {
        for seed in 0..5u64 {
            let spec = kinked(*noise);
            let reps: Vec<_> = (0..4)
                .map(|r| {
                    let dz = Increments::brownian(
                        1,
                        200,
                        2.5e-3,
                        StreamKey::new(100 + seed, Domain::Driver, r),
                    );
                    solve(&spec, &g, bump(&g), &dz, 0.5, &SolverOptions::default()).unwrap()
                })
                .collect();
            for p in [2.0, 4.0] {
                let rep = apriori_bound_check(&reps, &spec, p, 0.5, APRIORI_CONSTANT).unwrap();
                println!(
                    "scenario {i}/{seed} p = {p}: needs {}",
                    rep.required_constant()
                );
                reports.push(rep);
            }
        }
    }
    let needed = calibrate_constant(&reports, 1.0);
    println!("calibrated constant {needed}");
    assert!(needed <= APRIORI_CONSTANT);
    assert!(reports.iter().all(|r| r.margin > 0.0));
}

#[test]
fn holder_exponents_of_noisy_run() {
    let spec = kinked(0.2);
    let g = Grid::new(1, 6.0, 301).unwrap();
    let dz = Increments::brownian(1, 1024, 1.0 / 1024.0, StreamKey::new(5, Domain::Driver, 0));
    let tr = solve(&spec, &g, bump(&g), &dz, 1.0, &SolverOptions::default()).unwrap();
    let r = holder_exponents(&tr, &HolderOptions::default()).unwrap();
    println!("{:?} {:?}", r.time.exponent, r.space.exponent);
    assert!(r.time.exponent >= 0.4 && r.space.exponent >= 0.85);
}
