use serde::Serialize;

use super::terms::evaluate_trajectory;
use super::DiagnosticsError;
use crate::model::DivergenceFormSpec;
use crate::spde_solver::Trajectory;

/// Constant of the a priori bound, frozen from a calibration run over
/// kink-coefficient equations with p in {2, 4} (largest requirement 1.72,
/// doubled and rounded up). A regression threshold, not a proven value.
pub const APRIORI_CONSTANT: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AprioriReport {
    pub p: f64,
    pub horizon: f64,
    pub constant: f64,
    pub replicas: usize,
    /// `E sup_t ‖u_t‖_p^p`
    pub lhs: f64,
    /// `E‖u_0‖_p^p`
    pub initial: f64,
    /// `E ∫ ‖f^0‖_p^p dt`
    pub source: f64,
    /// `E ∫ (Σ_i ‖f^i‖_p^p + ‖g‖_p^p + ‖Du‖_p^p) dt`
    pub gradient: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl AprioriReport {
    fn weights(&self) -> (f64, f64) {
        let t = self.horizon;
        (t.powf(self.p - 1.0), t.powf((self.p - 2.0) / 2.0))
    }

    /// The smallest constant that makes this report's margin non-negative.
    pub fn required_constant(&self) -> f64 {
        let (w0, w1) = self.weights();
        let rest = w0 * self.source + w1 * self.gradient;
        let need = self.lhs - 2.0 * self.initial;
        if need <= 0.0 {
            0.0
        } else if rest > 0.0 {
            need / rest
        } else {
            f64::INFINITY
        }
    }
}

/// Evaluates both sides of the a priori bound on `[0, horizon]` from a set
/// of replica trajectories of the same equation. Time integrals are
/// left-point sums over the recorded states.
pub fn apriori_bound_check(
    replicas: &[Trajectory],
    spec: &DivergenceFormSpec,
    p: f64,
    horizon: f64,
    constant: f64,
) -> Result<AprioriReport, DiagnosticsError> {
    if replicas.is_empty() {
        return Err(DiagnosticsError::Input("no replicas".into()));
    }
    if p < 2.0 {
        return Err(DiagnosticsError::Exponent {
            p,
            cap: f64::INFINITY,
        });
    }
    let (mut lhs, mut initial, mut source, mut gradient) = (0.0, 0.0, 0.0, 0.0);
    for traj in replicas {
        if traj.grid.d != spec.d {
            return Err(DiagnosticsError::MisalignedGrids(
                "equation and grid dimensions differ".into(),
            ));
        }
        let terms = evaluate_trajectory(traj, spec, p)?;
        let times: Vec<f64> = traj.times().collect();
        let t0 = times[0];
        let mut sup = 0.0f64;
        for (i, tm) in terms.iter().enumerate() {
            if times[i] > t0 + horizon * (1.0 + 1e-12) {
                break;
            }
            sup = sup.max(tm.lp);
            if i + 1 < terms.len() && times[i + 1] <= t0 + horizon * (1.0 + 1e-12) {
                let span = times[i + 1] - times[i];
                source += tm.f0 * span;
                gradient += (tm.fi + tm.g + tm.du) * span;
            }
        }
        lhs += sup;
        initial += terms[0].lp;
    }
    let r = replicas.len() as f64;
    let mut rep = AprioriReport {
        p,
        horizon,
        constant,
        replicas: replicas.len(),
        lhs: lhs / r,
        initial: initial / r,
        source: source / r,
        gradient: gradient / r,
        rhs: 0.0,
        margin: 0.0,
    };
    let (w0, w1) = rep.weights();
    rep.rhs = 2.0 * rep.initial + constant * (w0 * rep.source + w1 * rep.gradient);
    rep.margin = rep.rhs - rep.lhs;
    Ok(rep)
}

/// Smallest constant that keeps every calibration margin non-negative,
/// times `safety`.
pub fn calibrate_constant(reports: &[AprioriReport], safety: f64) -> f64 {
    reports
        .iter()
        .map(AprioriReport::required_constant)
        .fold(0.0, f64::max)
        * safety
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Increments;
    use crate::spde_solver::{solve, FieldState, Grid, SolverOptions};

    fn heat() -> DivergenceFormSpec {
        DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 1.0).autonomous(true)
    }

    #[test]
    fn zero_solution_margin_is_rhs() {
        let g = Grid::new(1, 4.0, 41).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |_| 0.0).unwrap();
        let tr = solve(
            &heat(),
            &g,
            u0,
            &Increments::zeros(0, 10, 0.01),
            0.1,
            &SolverOptions::default(),
        )
        .unwrap();
        let r = apriori_bound_check(&[tr], &heat(), 2.0, 0.1, 3.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.margin, r.rhs);
        assert!(r.rhs >= 0.0);
    }

    #[test]
    fn heat_flow_is_dissipative() {
        let g = Grid::new(1, 8.0, 161).unwrap();
        let norm = (std::f64::consts::PI).sqrt();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp() / norm).unwrap();
        let tr = solve(
            &heat(),
            &g,
            u0,
            &Increments::zeros(0, 100, 0.01),
            1.0,
            &SolverOptions::default(),
        )
        .unwrap();
        let e: Vec<f64> = tr
            .states
            .iter()
            .map(|s| s.values.iter().map(|v| v * v).sum::<f64>())
            .collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
        for n in [0.0, 2.0, 10.0] {
            let r = apriori_bound_check(std::slice::from_ref(&tr), &heat(), 2.0, 1.0, n).unwrap();
            assert!(r.margin > 0.0);
            assert!((r.lhs - r.initial).abs() < 1e-15);
        }
    }
}
