use rayon::prelude::*;

use crate::model::DivergenceFormSpec;
use crate::spde_solver::{
    assemble_forcing, assemble_operator, ForcingSnapshot, OperatorStencil, SolverError, Trajectory,
};

/// Spatial integrals of one recorded state, written in terms of the full
/// right-hand side `du = (D_i f^i + f^0) dt + g^k dZ^k` with
/// `f^i = a^{ij} D_j u + a^i u + f^i_free`, `f^0 = b^i D_i u + c u + f^0_free`
/// and `g^k = Λ^k u + g^k_free`.
#[derive(Clone, Debug, Default)]
pub(crate) struct StateTerms {
    /// `∫|u|^p`
    pub lp: f64,
    /// `∫ p|u|^{p-2}u f^0 - p(p-1)|u|^{p-2} f^i D_i u + ½p(p-1)|u|^{p-2}|g|²`
    pub drift: f64,
    /// `p ∫|u|^{p-2} u g^k` per channel.
    pub noise: Vec<f64>,
    /// `∫|f^0|^p`
    pub f0: f64,
    /// `Σ_i ∫|f^i|^p`
    pub fi: f64,
    /// `∫|g|_{ℓ2}^p`
    pub g: f64,
    /// `Σ_i ∫|D_i u|^p`
    pub du: f64,
}

/// `f^i` and `D_i u` live on faces, the rest on nodes; face integrands use
/// the mean of the node weights `|u|^{p-2}` on both sides.
pub(crate) fn evaluate(
    u: &[f64],
    st: &OperatorStencil,
    fo: &ForcingSnapshot,
    p: f64,
) -> StateTerms {
    let grid = &st.grid;
    let nodes = grid.nodes();
    let vol = grid.cell_volume();
    let h = grid.h;
    let w: Vec<f64> = u.iter().map(|v| v.abs().powf(p - 2.0)).collect();

    let mut f0 = st.lower.apply_new(u);
    if let Some(src) = &fo.source {
        f0.iter_mut().zip(src).for_each(|(a, b)| *a += b);
    }
    let g: Vec<Vec<f64>> = st
        .noise
        .iter()
        .enumerate()
        .map(|(k, lam)| {
            let mut gk = lam.apply_new(u);
            if let Some(free) = &fo.noise {
                gk.iter_mut().zip(&free[k]).for_each(|(a, b)| *a += b);
            }
            gk
        })
        .collect();

    let mut out = StateTerms {
        noise: vec![0.0; g.len()],
        ..Default::default()
    };
    let mut drift = 0.0;
    for q in 0..nodes {
        let g2: f64 = g.iter().map(|gk| gk[q] * gk[q]).sum();
        out.lp += u[q].abs().powf(p);
        out.f0 += f0[q].abs().powf(p);
        out.g += g2.powf(0.5 * p);
        drift += p * w[q] * u[q] * f0[q] + 0.5 * p * (p - 1.0) * w[q] * g2;
        for (k, gk) in g.iter().enumerate() {
            out.noise[k] += p * w[q] * u[q] * gk[q];
        }
    }
    for (j, flux) in st.fluxes.iter().enumerate() {
        let s = grid.stride(j);
        let mut fj = flux.apply_new(u);
        if let Some(free) = &fo.face_flux {
            fj.iter_mut().zip(&free[j]).for_each(|(a, b)| *a += b);
        }
        for q in 0..nodes {
            if grid.multi_index(q)[j] + 1 >= grid.n {
                continue;
            }
            let du = (u[q + s] - u[q]) / h;
            let wf = 0.5 * (w[q] + w[q + s]);
            drift -= p * (p - 1.0) * wf * fj[q] * du;
            out.fi += fj[q].abs().powf(p);
            out.du += du.abs().powf(p);
        }
    }
    out.drift = drift * vol;
    out.lp *= vol;
    out.f0 *= vol;
    out.g *= vol;
    out.fi *= vol;
    out.du *= vol;
    out.noise.iter_mut().for_each(|v| *v *= vol);
    out
}

/// Terms of every recorded state of `traj`.
pub(crate) fn evaluate_trajectory(
    traj: &Trajectory,
    spec: &DivergenceFormSpec,
    p: f64,
) -> Result<Vec<StateTerms>, SolverError> {
    let grid = &traj.grid;
    let budget = traj.options.memory_budget;
    if spec.autonomous {
        let st = assemble_operator(spec, grid, 0.0, budget)?;
        let fo = assemble_forcing(spec, grid, 0.0)?;
        Ok(traj
            .states
            .par_iter()
            .map(|s| evaluate(&s.values, &st, &fo, p))
            .collect())
    } else {
        traj.states
            .par_iter()
            .map(|s| {
                let st = assemble_operator(spec, grid, s.t, budget)?;
                let fo = assemble_forcing(spec, grid, s.t)?;
                Ok(evaluate(&s.values, &st, &fo, p))
            })
            .collect()
    }
}
