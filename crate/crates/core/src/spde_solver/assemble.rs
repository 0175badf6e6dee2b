use rayon::prelude::*;

use super::grid::Grid;
use super::sparse::Csr;
use super::SolverError;
use crate::model::DivergenceFormSpec;

type Row = Vec<(usize, f64)>;

/// Discrete operators of the equation frozen at time `t`.
#[derive(Clone, Debug)]
pub struct OperatorStencil {
    pub t: f64,
    pub grid: Grid,
    /// Discrete `L`; boundary rows are empty.
    pub l: Csr,
    /// Per axis `j`, row `p`: the flux `F^j` through the face between `p` and
    /// `p + e_j` (empty where that face is not adjacent to the interior).
    pub fluxes: Vec<Csr>,
    /// The lower-order part `b^i D_i + c` of `L`.
    pub lower: Csr,
    /// Discrete `Λ^k`, one matrix per noise channel.
    pub noise: Vec<Csr>,
    /// `max_node Σ_k ‖Λ^k row‖₁²`, the explicit-noise stability measure.
    pub noise_norm2: f64,
}

/// Free terms frozen at time `t`, all zero on the boundary.
#[derive(Clone, Debug, Default)]
pub struct ForcingSnapshot {
    pub t: f64,
    /// Per axis, `f^j` at the face between `p` and `p + e_j`.
    pub face_flux: Option<Vec<Vec<f64>>>,
    /// Face-flux divergence of `f`.
    pub divergence: Option<Vec<f64>>,
    pub source: Option<Vec<f64>>,
    /// Per channel, `g^k` at the nodes.
    pub noise: Option<Vec<Vec<f64>>>,
}

impl ForcingSnapshot {
    pub fn is_zero(&self) -> bool {
        self.divergence.is_none() && self.source.is_none() && self.noise.is_none()
    }
}

fn finite(what: &'static str, x: &[f64], v: &[f64]) -> Result<(), SolverError> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFinite {
            what,
            point: x.to_vec(),
        })
    }
}

/// Whether the face from `p` along `axis` touches the interior.
fn face_needed(grid: &Grid, p: usize, axis: usize) -> bool {
    let idx = grid.multi_index(p);
    idx.iter().enumerate().all(|(a, &i)| {
        if a == axis {
            i + 1 < grid.n
        } else {
            i >= 1 && i + 1 < grid.n
        }
    })
}

fn face_point(grid: &Grid, p: usize, axis: usize) -> Vec<f64> {
    let idx = grid.multi_index(p);
    idx.iter()
        .enumerate()
        .map(|(a, &i)| grid.axis_coord(if a == axis { i as f64 + 0.5 } else { i as f64 }))
        .collect()
}

/// Approximate bytes needed for all assembled matrices.
pub fn assembly_bytes(grid: &Grid, channels: usize) -> usize {
    let d = grid.d;
    let flux_width = 2 + 4 * (d - 1);
    let l_width = 1 + 2 * d * (1 + 2 * (d - 1)) + 2 * d;
    let lower_width = 1 + 2 * d;
    let per_node = d * flux_width + 2 * l_width + lower_width + channels * lower_width;
    grid.nodes().saturating_mul(per_node).saturating_mul(16)
}

pub fn assemble_operator(
    spec: &DivergenceFormSpec,
    grid: &Grid,
    t: f64,
    memory_budget: usize,
) -> Result<OperatorStencil, SolverError> {
    if spec.d != grid.d {
        return Err(SolverError::Dimension(format!(
            "equation has d = {}, grid has d = {}",
            spec.d, grid.d
        )));
    }
    let need = assembly_bytes(grid, spec.channels);
    if need > memory_budget {
        return Err(SolverError::AssemblyOverflow {
            nodes: grid.nodes(),
            budget: memory_budget,
        });
    }
    let d = grid.d;
    let h = grid.h;
    let nodes = grid.nodes();

    let fluxes: Vec<Csr> = (0..d)
        .map(|j| -> Result<Csr, SolverError> {
            let sj = grid.stride(j);
            let rows: Vec<Row> = (0..nodes)
                .into_par_iter()
                .map(|p| -> Result<Row, SolverError> {
                    if !face_needed(grid, p, j) {
                        return Ok(Vec::new());
                    }
                    let q = p + sj;
                    let xf = face_point(grid, p, j);
                    let mut a = vec![0.0; d * d];
                    (spec.diffusion)(t, &xf, &mut a);
                    finite("diffusion", &xf, &a)?;
                    let mut row = Vec::with_capacity(2 + 4 * (d - 1));
                    let ajj = a[j * d + j];
                    row.push((q, ajj / h));
                    row.push((p, -ajj / h));
                    for i in (0..d).filter(|i| *i != j) {
                        let c = a[i * d + j] / (4.0 * h);
                        if c != 0.0 {
                            let si = grid.stride(i);
                            row.extend([(p + si, c), (p - si, -c), (q + si, c), (q - si, -c)]);
                        }
                    }
                    if let Some(conv) = &spec.convection {
                        let mut v = vec![0.0; d];
                        conv(t, &xf, &mut v);
                        finite("convection", &xf, &v)?;
                        if v[j] != 0.0 {
                            row.push((p, 0.5 * v[j]));
                            row.push((q, 0.5 * v[j]));
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_, _>>()?;
            Ok(Csr::from_rows(rows))
        })
        .collect::<Result<_, _>>()?;

    let lower_rows: Vec<Row> = (0..nodes)
        .into_par_iter()
        .map(|p| -> Result<Row, SolverError> {
            if grid.is_boundary(p) || (spec.drift.is_none() && spec.reaction.is_none()) {
                return Ok(Vec::new());
            }
            let x = grid.point(p);
            let mut row = Vec::new();
            if let Some(b) = &spec.drift {
                let mut v = vec![0.0; d];
                b(t, &x, &mut v);
                finite("drift", &x, &v)?;
                for (i, bi) in v.iter().enumerate().filter(|(_, b)| **b != 0.0) {
                    let si = grid.stride(i);
                    row.push((p + si, bi / (2.0 * h)));
                    row.push((p - si, -bi / (2.0 * h)));
                }
            }
            if let Some(c) = &spec.reaction {
                let v = c(t, &x);
                finite("reaction", &x, &[v])?;
                row.push((p, v));
            }
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    let lower = Csr::from_rows(lower_rows);

    let l_rows: Vec<Row> = (0..nodes)
        .into_par_iter()
        .map(|p| {
            if grid.is_boundary(p) {
                return Vec::new();
            }
            let mut row = Vec::new();
            for (j, f) in fluxes.iter().enumerate() {
                let (c, v) = f.row(p);
                row.extend(c.iter().zip(v).map(|(c, v)| (*c, v / h)));
                let (c, v) = f.row(p - grid.stride(j));
                row.extend(c.iter().zip(v).map(|(c, v)| (*c, -v / h)));
            }
            let (c, v) = lower.row(p);
            row.extend(c.iter().cloned().zip(v.iter().cloned()));
            row
        })
        .collect();
    let l = Csr::from_rows(l_rows);

    let noise: Vec<Csr> = (0..spec.channels)
        .map(|k| -> Result<Csr, SolverError> {
            if spec.noise_gradient.is_none() && spec.noise_reaction.is_none() {
                return Ok(Csr::zeros(nodes));
            }
            let m = spec.channels;
            let rows: Vec<Row> = (0..nodes)
                .into_par_iter()
                .map(|p| -> Result<Row, SolverError> {
                    if grid.is_boundary(p) {
                        return Ok(Vec::new());
                    }
                    let x = grid.point(p);
                    let mut row = Vec::new();
                    if let Some(sig) = &spec.noise_gradient {
                        let mut s = vec![0.0; d * m];
                        sig(t, &x, &mut s);
                        finite("noise_gradient", &x, &s)?;
                        for i in 0..d {
                            let c = s[i * m + k] / (2.0 * h);
                            if c != 0.0 {
                                let si = grid.stride(i);
                                row.push((p + si, c));
                                row.push((p - si, -c));
                            }
                        }
                    }
                    if let Some(nu) = &spec.noise_reaction {
                        let mut v = vec![0.0; m];
                        nu(t, &x, &mut v);
                        finite("noise_reaction", &x, &v)?;
                        row.push((p, v[k]));
                    }
                    Ok(row)
                })
                .collect::<Result<_, _>>()?;
            Ok(Csr::from_rows(rows))
        })
        .collect::<Result<_, _>>()?;

    let noise_norm2 = (0..nodes)
        .map(|p| {
            noise
                .iter()
                .map(|m: &Csr| m.row_abs_sum(p).powi(2))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(OperatorStencil {
        t,
        grid: *grid,
        l,
        fluxes,
        lower,
        noise,
        noise_norm2,
    })
}

pub fn assemble_forcing(
    spec: &DivergenceFormSpec,
    grid: &Grid,
    t: f64,
) -> Result<ForcingSnapshot, SolverError> {
    let d = grid.d;
    let nodes = grid.nodes();
    let mut out = ForcingSnapshot {
        t,
        ..Default::default()
    };
    if let Some(f) = &spec.flux_forcing {
        let faces: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..nodes)
                    .into_par_iter()
                    .map(|p| {
                        if !face_needed(grid, p, j) {
                            return Ok(0.0);
                        }
                        let xf = face_point(grid, p, j);
                        let mut v = vec![0.0; d];
                        f(t, &xf, &mut v);
                        finite("flux_forcing", &xf, &v)?;
                        Ok(v[j])
                    })
                    .collect::<Result<Vec<f64>, SolverError>>()
            })
            .collect::<Result<_, _>>()?;
        let div = (0..nodes)
            .map(|p| {
                if grid.is_boundary(p) {
                    return 0.0;
                }
                (0..d)
                    .map(|j| (faces[j][p] - faces[j][p - grid.stride(j)]) / grid.h)
                    .sum()
            })
            .collect();
        out.face_flux = Some(faces);
        out.divergence = Some(div);
    }
    if let Some(f0) = &spec.source {
        let v = (0..nodes)
            .into_par_iter()
            .map(|p| {
                if grid.is_boundary(p) {
                    return Ok(0.0);
                }
                let x = grid.point(p);
                let v = f0(t, &x);
                finite("source", &x, &[v])?;
                Ok(v)
            })
            .collect::<Result<Vec<f64>, SolverError>>()?;
        out.source = Some(v);
    }
    if let Some(g) = &spec.noise_forcing {
        let m = spec.channels;
        let per_node = (0..nodes)
            .into_par_iter()
            .map(|p| {
                if grid.is_boundary(p) {
                    return Ok(vec![0.0; m]);
                }
                let x = grid.point(p);
                let mut v = vec![0.0; m];
                g(t, &x, &mut v);
                finite("noise_forcing", &x, &v)?;
                Ok(v)
            })
            .collect::<Result<Vec<Vec<f64>>, SolverError>>()?;
        out.noise = Some(
            (0..m)
                .map(|k| per_node.iter().map(|v| v[k]).collect())
                .collect(),
        );
    }
    Ok(out)
}
