use serde::{Deserialize, Serialize};

use super::{fit_slope, DiagnosticsError};
use crate::spde_solver::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderOptions {
    /// Nodes excluded next to the boundary.
    pub margin: usize,
    pub min_levels: usize,
    /// Largest time lag as a fraction of the recorded horizon.
    pub max_lag_fraction: f64,
    /// Node offsets `1, 2, …, 2^(space_levels-1)`.
    pub space_levels: usize,
    /// Increments below `degenerate · sup|u|` count as zero.
    pub degenerate: f64,
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self {
            margin: 2,
            min_levels: 4,
            max_lag_fraction: 0.25,
            space_levels: 5,
            degenerate: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub scales: Vec<f64>,
    pub increments: Vec<f64>,
    pub exponent: f64,
    pub std_error: f64,
    /// Half-width of the 95% band.
    pub band: f64,
    /// Increments vanish; the exponent is meaningless.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderReport {
    pub time: ExponentFit,
    pub space: ExponentFit,
}

fn fit(scales: Vec<f64>, increments: Vec<f64>, floor: f64) -> ExponentFit {
    let degenerate = increments.iter().any(|v| !(*v > floor));
    if degenerate {
        return ExponentFit {
            scales,
            increments,
            exponent: f64::NAN,
            std_error: f64::NAN,
            band: f64::NAN,
            degenerate,
        };
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = increments.iter().map(|s| s.ln()).collect();
    let (exponent, std_error, band) = fit_slope(&xs, &ys);
    ExponentFit {
        scales,
        increments,
        exponent,
        std_error,
        band,
        degenerate,
    }
}

/// Hölder exponents of a recorded field by regression over dyadic scales.
///
/// Time: for each lag `Δ = 2^j · (recorded spacing)` up to the configured
/// fraction of the horizon, the root mean square over start times of
/// `sup_x |u(t+Δ, x) - u(t, x)|`. Space: for each offset of `2^j` nodes, the
/// maximum over snapshots of `sup_x |u(t, x + r e_i) - u(t, x)|`. Suprema run
/// over nodes at least `margin` away from the boundary.
pub fn holder_exponents(
    traj: &Trajectory,
    opts: &HolderOptions,
) -> Result<HolderReport, DiagnosticsError> {
    let grid = &traj.grid;
    let steps = &traj.steps;
    if steps.len() < 2 {
        return Err(DiagnosticsError::InsufficientScales {
            needed: opts.min_levels,
            have: 0,
        });
    }
    let spacing = steps[1] - steps[0];
    if steps.windows(2).any(|w| w[1] - w[0] != spacing) {
        return Err(DiagnosticsError::MisalignedGrids(
            "recorded states are not evenly spaced".into(),
        ));
    }
    let interior: Vec<usize> = (0..grid.nodes())
        .filter(|&p| grid.boundary_distance(p) >= opts.margin)
        .collect();
    let scale = traj
        .states
        .iter()
        .map(|s| {
            interior
                .iter()
                .fold(0.0f64, |m, &p| m.max(s.values[p].abs()))
        })
        .fold(0.0f64, f64::max);
    let floor = opts.degenerate * scale;

    let records = steps.len() - 1;
    let max_lag = ((records as f64) * opts.max_lag_fraction).floor() as usize;
    let mut lags = Vec::new();
    let mut lag = 1;
    while lag <= max_lag {
        lags.push(lag);
        lag *= 2;
    }
    if lags.len() < opts.min_levels {
        return Err(DiagnosticsError::InsufficientScales {
            needed: opts.min_levels,
            have: lags.len(),
        });
    }
    let sup_diff = |a: &[f64], b: &[f64]| {
        interior
            .iter()
            .fold(0.0f64, |m, &p| m.max((a[p] - b[p]).abs()))
    };
    let time_inc: Vec<f64> = lags
        .iter()
        .map(|&l| {
            let count = records + 1 - l;
            let ms: f64 = (0..count)
                .map(|i| sup_diff(&traj.states[i + l].values, &traj.states[i].values).powi(2))
                .sum::<f64>()
                / count as f64;
            ms.sqrt()
        })
        .collect();
    let dt_rec = spacing as f64 * traj.dt;
    let time = fit(
        lags.iter().map(|&l| l as f64 * dt_rec).collect(),
        time_inc,
        floor,
    );

    let offsets: Vec<usize> = (0..opts.space_levels)
        .map(|j| 1usize << j)
        .filter(|&r| r + 2 * opts.margin < grid.n)
        .collect();
    if offsets.len() < opts.min_levels {
        return Err(DiagnosticsError::InsufficientScales {
            needed: opts.min_levels,
            have: offsets.len(),
        });
    }
    let space_inc: Vec<f64> = offsets
        .iter()
        .map(|&r| {
            traj.states
                .iter()
                .map(|s| {
                    let mut m = 0.0f64;
                    for axis in 0..grid.d {
                        let stride = grid.stride(axis);
                        for &p in &interior {
                            let idx = grid.multi_index(p)[axis];
                            if idx + r + opts.margin < grid.n {
                                m = m.max((s.values[p + r * stride] - s.values[p]).abs());
                            }
                        }
                    }
                    m
                })
                .fold(0.0f64, f64::max)
        })
        .collect();
    let space = fit(
        offsets.iter().map(|&r| r as f64 * grid.h).collect(),
        space_inc,
        floor,
    );
    Ok(HolderReport { time, space })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DivergenceFormSpec;
    use crate::rng::{Domain, Increments, StreamKey};
    use crate::spde_solver::{solve, FieldState, Grid, SolverOptions};

    #[test]
    fn stationary_field_is_flagged() {
        let spec = DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 0.0).autonomous(true);
        let g = Grid::new(1, 3.0, 241).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let tr = solve(
            &spec,
            &g,
            u0,
            &Increments::zeros(0, 64, 0.01),
            0.64,
            &SolverOptions::default(),
        )
        .unwrap();
        let r = holder_exponents(&tr, &HolderOptions::default()).unwrap();
        assert!(r.time.degenerate);
        assert!(!r.space.degenerate);
        assert!((r.space.exponent - 1.0).abs() < 0.1, "{}", r.space.exponent);
    }

    #[test]
    fn too_few_levels() {
        let spec = DivergenceFormSpec::new(1, 0, |_, _, a| a[0] = 1.0).autonomous(true);
        let g = Grid::new(1, 3.0, 61).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let tr = solve(
            &spec,
            &g,
            u0,
            &Increments::zeros(0, 20, 0.01),
            0.2,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            holder_exponents(&tr, &HolderOptions::default()),
            Err(DiagnosticsError::InsufficientScales { needed: 4, have: 3 })
        ));
    }

    #[test]
    fn multiplicative_noise_gives_half() {
        // u(t, x) = u_0(x) exp(W_t - t/2) up to the boundary layer
        let spec = DivergenceFormSpec::new(1, 1, |_, _, a| a[0] = 0.0)
            .with_noise_reaction(|_, _, v| v[0] = 1.0)
            .autonomous(true);
        let g = Grid::new(1, 3.0, 31).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| 1.0 + 0.1 * x[0]).unwrap();
        let dz = Increments::brownian(1, 4096, 1.0 / 4096.0, StreamKey::new(8, Domain::Driver, 0));
        let tr = solve(&spec, &g, u0, &dz, 1.0, &SolverOptions::default()).unwrap();
        let r = holder_exponents(&tr, &HolderOptions::default()).unwrap();
        assert!((r.time.exponent - 0.5).abs() < 0.1, "{:?}", r.time);
        assert!(r.time.band.is_finite());
    }
}
