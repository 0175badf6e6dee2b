use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::DiagnosticsError;
use crate::model::{DivergenceFormSpec, ScalarFn, StateFn};
use crate::rng::Increments;
use crate::spde_solver::{solve, FieldState, Grid, SolverOptions, Trajectory};

/// Gauss–Hermite rule for the standard normal weight (Golub–Welsch):
/// `E f(Z) ≈ Σ w_i f(z_i)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Tensor-product offsets `eps · z` and weights in dimension `d`.
fn stencil(d: usize, eps: f64, nodes: usize) -> Vec<(Vec<f64>, f64)> {
    let (z, w) = gauss_hermite(nodes);
    let mut out = vec![(Vec::new(), 1.0)];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|(off, wt)| {
                z.iter().zip(&w).map(move |(zi, wi)| {
                    let mut o = off.clone();
                    o.push(eps * zi);
                    (o, wt * wi)
                })
            })
            .collect();
    }
    out
}

fn smooth_state(f: &StateFn, rule: Arc<Vec<(Vec<f64>, f64)>>) -> StateFn {
    let f = f.clone();
    Arc::new(move |t: f64, x: &[f64], out: &mut [f64]| {
        let mut acc = vec![0.0; out.len()];
        let mut buf = vec![0.0; out.len()];
        let mut y = x.to_vec();
        for (off, w) in rule.iter() {
            for i in 0..x.len() {
                y[i] = x[i] + off[i];
            }
            f(t, &y, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += w * b);
        }
        out.copy_from_slice(&acc);
    })
}

fn smooth_scalar(f: &ScalarFn, rule: Arc<Vec<(Vec<f64>, f64)>>) -> ScalarFn {
    let f = f.clone();
    Arc::new(move |t: f64, x: &[f64]| {
        let mut y = x.to_vec();
        rule.iter()
            .map(|(off, w)| {
                for i in 0..x.len() {
                    y[i] = x[i] + off[i];
                }
                w * f(t, &y)
            })
            .sum()
    })
}

/// Every coefficient and free term convolved in `x` with the Gaussian of
/// standard deviation `eps`, by a tensor Gauss–Hermite rule with `nodes`
/// points per axis. `eps = 0` returns the equation unchanged.
pub fn mollify(spec: &DivergenceFormSpec, eps: f64, nodes: usize) -> DivergenceFormSpec {
    if eps == 0.0 {
        return spec.clone();
    }
    let rule = Arc::new(stencil(spec.d, eps, nodes));
    let st = |f: &Option<StateFn>| f.as_ref().map(|f| smooth_state(f, rule.clone()));
    DivergenceFormSpec {
        diffusion: smooth_state(&spec.diffusion, rule.clone()),
        convection: st(&spec.convection),
        drift: st(&spec.drift),
        noise_gradient: st(&spec.noise_gradient),
        noise_reaction: st(&spec.noise_reaction),
        flux_forcing: st(&spec.flux_forcing),
        noise_forcing: st(&spec.noise_forcing),
        reaction: spec
            .reaction
            .as_ref()
            .map(|f| smooth_scalar(f, rule.clone())),
        source: spec.source.as_ref().map(|f| smooth_scalar(f, rule.clone())),
        ..spec.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceEntry {
    pub eps: f64,
    /// `max_t ‖u_ε - u‖_p`
    pub sup_lp: f64,
    /// `(∫ ‖u_ε - u‖_p^p + Σ_i ‖D_i(u_ε - u)‖_p^p dt)^{1/p}`
    pub w1p: f64,
    /// Share of `∫‖u_ε - u‖_p^p dt` coming from the boundary layer.
    pub boundary_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DependenceReport {
    pub p: f64,
    pub slack: f64,
    pub entries: Vec<DependenceEntry>,
    /// Every halving of `eps` satisfies `e_{n+1} ≤ (1 + slack) e_n` in both
    /// norms.
    pub decreasing: bool,
}

fn errors(a: &Trajectory, b: &Trajectory, p: f64, layer: usize) -> (f64, f64, f64) {
    let grid = &a.grid;
    let vol = grid.cell_volume();
    let mut sup = 0.0f64;
    let mut integral = 0.0;
    let mut lp_total = 0.0;
    let mut lp_layer = 0.0;
    let n = a.states.len();
    for i in 0..n {
        let e: Vec<f64> = a.states[i]
            .values
            .iter()
            .zip(&b.states[i].values)
            .map(|(x, y)| x - y)
            .collect();
        let lp: f64 = e.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol;
        sup = sup.max(lp.powf(1.0 / p));
        if i + 1 == n {
            break;
        }
        let span = (a.steps[i + 1] - a.steps[i]) as f64 * a.dt;
        let layer_lp: f64 = e
            .iter()
            .enumerate()
            .filter(|(q, _)| grid.boundary_distance(*q) < layer)
            .map(|(_, v)| v.abs().powf(p))
            .sum::<f64>()
            * vol;
        let mut grad = 0.0;
        for axis in 0..grid.d {
            let s = grid.stride(axis);
            for q in 0..grid.nodes() {
                if grid.multi_index(q)[axis] + 1 < grid.n {
                    grad += ((e[q + s] - e[q]) / grid.h).abs().powf(p);
                }
            }
        }
        integral += (lp + grad * vol) * span;
        lp_total += lp * span;
        lp_layer += layer_lp * span;
    }
    let share = if lp_total > 0.0 {
        lp_layer / lp_total
    } else {
        0.0
    };
    (sup, integral.powf(1.0 / p), share)
}

/// Solves the equation and its mollifications at each of the decreasing
/// `scales` against one driver and measures the distance to the unmollified
/// solution. The boundary layer is the outer tenth of the nodes on each axis.
#[allow(clippy::too_many_arguments)]
pub fn continuous_dependence_study(
    base: &DivergenceFormSpec,
    scales: &[f64],
    grid: &Grid,
    u0: &FieldState,
    driver: &Increments,
    horizon: f64,
    opts: &SolverOptions,
    p: f64,
    quadrature_nodes: usize,
) -> Result<DependenceReport, DiagnosticsError> {
    if scales.windows(2).any(|w| w[1] >= w[0]) || scales.iter().any(|e| *e < 0.0) {
        return Err(DiagnosticsError::Input(
            "scales must be non-negative and decreasing".into(),
        ));
    }
    if p < 1.0 {
        return Err(DiagnosticsError::Exponent {
            p,
            cap: f64::INFINITY,
        });
    }
    let reference = solve(base, grid, u0.clone(), driver, horizon, opts)?;
    let layer = (grid.n / 10).max(1);
    let mut entries = Vec::with_capacity(scales.len());
    for &eps in scales {
        let spec = mollify(base, eps, quadrature_nodes);
        let traj = solve(&spec, grid, u0.clone(), driver, horizon, opts)?;
        let (sup_lp, w1p, boundary_share) = errors(&traj, &reference, p, layer);
        entries.push(DependenceEntry {
            eps,
            sup_lp,
            w1p,
            boundary_share,
        });
    }
    let slack = 0.1;
    let decreasing = entries.windows(2).all(|w| {
        w[1].sup_lp <= (1.0 + slack) * w[0].sup_lp && w[1].w1p <= (1.0 + slack) * w[0].w1p
    });
    Ok(DependenceReport {
        p,
        slack,
        entries,
        decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};

    #[test]
    fn hermite_rule_integrates_moments() {
        let (z, w) = gauss_hermite(10);
        let m = |k: i32| z.iter().zip(&w).map(|(x, wi)| wi * x.powi(k)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn affine_coefficients_are_unchanged() {
        let spec = DivergenceFormSpec::new(2, 1, |_, x, a| {
            a.copy_from_slice(&[1.0 + 0.1 * x[0], 0.0, 0.0, 2.0 - 0.2 * x[1]])
        })
        .with_reaction(|_, x| 0.5 * x[0] - x[1]);
        let m = mollify(&spec, 0.3, 6);
        let x = [0.7, -1.1];
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        (spec.diffusion)(0.0, &x, &mut a);
        (m.diffusion)(0.0, &x, &mut b);
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-13);
        }
        let c = (m.reaction.as_ref().unwrap())(0.0, &x);
        assert!((c - (0.35 + 1.1)).abs() < 1e-13);
    }

    #[test]
    fn kink_is_smoothed_to_closed_form() {
        // E|x + εZ| = x(1 - 2Φ(-x/ε)) + 2εφ(x/ε)
        let spec = DivergenceFormSpec::new(1, 0, |_, x, a| a[0] = x[0].abs());
        let m = mollify(&spec, 0.2, 40);
        let mut out = [0.0];
        (m.diffusion)(0.0, &[0.5], &mut out);
        let r = 0.5f64 / 0.2;
        let phi = (-0.5 * r * r).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = 0.5 * statrs::function::erf::erfc(r / std::f64::consts::SQRT_2);
        let exact = 0.5 * (1.0 - 2.0 * cdf) + 2.0 * 0.2 * phi;
        assert!((out[0] - exact).abs() < 2e-3, "{} vs {exact}", out[0]);
    }

    #[test]
    fn zero_scale_gives_zero_error_and_affine_stays_put() {
        let spec = DivergenceFormSpec::new(1, 1, |_, x, a| a[0] = 1.0 + 0.05 * x[0])
            .with_noise_reaction(|_, _, v| v[0] = 0.5)
            .autonomous(true);
        let g = Grid::new(1, 5.0, 101).unwrap();
        let u0 = FieldState::from_fn(&g, 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let dz = Increments::brownian(1, 50, 2e-3, StreamKey::new(2, Domain::Driver, 0));
        let r = continuous_dependence_study(
            &spec,
            &[0.4, 0.2, 0.0],
            &g,
            &u0,
            &dz,
            0.1,
            &SolverOptions::default(),
            2.0,
            8,
        )
        .unwrap();
        assert_eq!(r.entries[2].sup_lp, 0.0);
        assert_eq!(r.entries[2].w1p, 0.0);
        for e in &r.entries {
            assert!(e.sup_lp < 1e-8, "{e:?}");
        }
    }
}
