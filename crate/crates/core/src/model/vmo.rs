use serde::{Deserialize, Serialize};

use super::ModelError;

/// Resolution of the oscillation quadratures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VmoQuadrature {
    /// Midpoint nodes per axis on the bounding cube of the ball.
    pub ball_points_per_axis: usize,
    /// Midpoint nodes on `[s, s + ρ²]`.
    pub time_points: usize,
    /// Candidate start times `s` inside the window.
    pub shifts: usize,
    /// Constant path shifts per axis for `Osc` (odd keeps the zero shift).
    pub path_shifts_per_axis: usize,
    /// Dyadic radii `ρ, ρ/2, ...` for `Osc`.
    pub radii: usize,
}

impl VmoQuadrature {
    pub fn coarse() -> Self {
        Self {
            ball_points_per_axis: 32,
            time_points: 4,
            shifts: 4,
            path_shifts_per_axis: 3,
            radii: 3,
        }
    }

    pub fn fine() -> Self {
        Self {
            ball_points_per_axis: 2000,
            time_points: 16,
            shifts: 8,
            path_shifts_per_axis: 5,
            radii: 4,
        }
    }
}

impl Default for VmoQuadrature {
    fn default() -> Self {
        Self {
            ball_points_per_axis: 256,
            time_points: 8,
            shifts: 8,
            path_shifts_per_axis: 3,
            radii: 3,
        }
    }
}

fn ball_offsets(dim: usize, rho: f64, n: usize) -> Vec<Vec<f64>> {
    let n = n.max(1);
    let total = n.pow(dim as u32);
    let step = 2.0 * rho / n as f64;
    let mut out = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(-rho + (rem % n) as f64 * step + 0.5 * step);
            rem /= n;
        }
        if v.iter().map(|a| a * a).sum::<f64>() < rho * rho {
            out.push(v);
        }
    }
    out
}

/// Mean absolute deviation from the mean. Differences are taken against the
/// first sample so that a constant input gives exactly zero.
fn mean_abs_deviation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let base = values[0];
    let mean_shift = values.iter().map(|v| v - base).sum::<f64>() / n;
    values
        .iter()
        .map(|v| ((v - base) - mean_shift).abs())
        .sum::<f64>()
        / n
}

/// Discretized `osc_ρ(h, x_·)`: the largest time average over `[s, s + ρ²]`
/// of the mean absolute deviation of `h` from its average over the moving
/// ball `B_ρ + x_r`.
pub fn vmo_osc(
    h: &dyn Fn(f64, &[f64]) -> f64,
    rho: f64,
    path: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    q: &VmoQuadrature,
) -> Result<f64, ModelError> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(ModelError::BadRadius(rho));
    }
    let dim = path(window.0).len();
    let offsets = ball_offsets(dim, rho, q.ball_points_per_axis);
    if offsets.is_empty() {
        return Err(ModelError::BadRadius(rho));
    }
    let span = rho * rho;
    let room = window.1 - window.0 - span;
    let starts: Vec<f64> = if room <= 0.0 || q.shifts <= 1 {
        vec![window.0]
    } else {
        (0..q.shifts)
            .map(|i| window.0 + room * i as f64 / (q.shifts - 1) as f64)
            .collect()
    };
    let nt = q.time_points.max(1);
    let mut values = vec![0.0; offsets.len()];
    let mut point = vec![0.0; dim];
    let mut best: f64 = 0.0;
    for s in starts {
        let mut acc = 0.0;
        for j in 0..nt {
            let r = s + (j as f64 + 0.5) * span / nt as f64;
            let centre = path(r);
            for (v, off) in values.iter_mut().zip(&offsets) {
                for a in 0..dim {
                    point[a] = centre[a] + off[a];
                }
                *v = h(r, &point);
            }
            acc += mean_abs_deviation(&values);
        }
        best = best.max(acc / nt as f64);
    }
    Ok(best)
}

/// `Osc_ρ(h, y)`: supremum of `osc_r(h, y + x_·)` over constant paths with
/// `|x| ≤ ρ` and dyadic radii `r ≤ ρ`.
pub fn vmo_osc_sup(
    h: &dyn Fn(f64, &[f64]) -> f64,
    rho: f64,
    y: &[f64],
    window: (f64, f64),
    q: &VmoQuadrature,
) -> Result<f64, ModelError> {
    if !(rho > 0.0) {
        return Err(ModelError::BadRadius(rho));
    }
    let dim = y.len();
    let n = q.path_shifts_per_axis.max(1);
    let mut shifts = Vec::new();
    for idx in 0..n.pow(dim as u32) {
        let mut rem = idx;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            let i = rem % n;
            rem /= n;
            v.push(if n == 1 {
                0.0
            } else {
                -rho + 2.0 * rho * i as f64 / (n - 1) as f64
            });
        }
        if v.iter().map(|a| a * a).sum::<f64>() <= rho * rho * (1.0 + 1e-12) {
            shifts.push(v);
        }
    }
    let mut best: f64 = 0.0;
    for shift in &shifts {
        let centre: Vec<f64> = y.iter().zip(shift).map(|(a, b)| a + b).collect();
        let path = move |_t: f64| centre.clone();
        for j in 0..q.radii.max(1) {
            let r = rho / (1u64 << j) as f64;
            best = best.max(vmo_osc(h, r, &path, window, q)?);
        }
    }
    Ok(best)
}
