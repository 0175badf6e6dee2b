//! simulate → filter → oracles → diagnostics, with artifacts on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use zakai_core::diagnostics::{
    apriori_bound_check, continuous_dependence_study, holder_exponents, ito_refinement, write_json,
    DiagnosticsError,
};
use zakai_core::model::families::{affine, kink, trigonometric, AffineParams};
use zakai_core::model::{vmo_osc, DivergenceFormSpec, InitialLaw, ModelError, SystemSpec};
use zakai_core::oracles::{
    kalman_bucy_solve, particle_filter_solve, LinearGaussianSpec, OracleError, ParticleOptions,
};
use zakai_core::rng::{Domain, Increments, StreamKey};
use zakai_core::sde_sim::{simulate_replica, step_count, PathBundle, SimError};
use zakai_core::spde_solver::{
    solve, write_snapshots_binary, FieldState, Grid, SolverError, Trajectory,
};
use zakai_core::zakai::{
    filter_equation, initial_density, innovation_process, observation_driver, run_zakai,
    FilterOutput, ZakaiError,
};

use crate::config::{ModelConfig, Scenario};
use crate::summary::{Check, Comparison, Summary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failure inside a pipeline stage; recorded in the summary.
#[derive(Debug, Error)]
enum StageError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("filter: {0}")]
    Zakai(#[from] ZakaiError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("diagnostics: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Unsupported(String),
}

pub struct RunOutcome {
    pub id: String,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Runs every enabled stage of `scenario` and writes the artifact tree under
/// `outdir/<scenario id>/`. Stage failures end the run early and are listed
/// in the (partial) summary.
pub fn run_scenario(scenario: &Scenario, outdir: &Path) -> Result<RunOutcome, RunError> {
    let id = scenario.id();
    let dir = outdir.join(&id);
    for sub in ["paths", "densities", "oracle", "diagnostics"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    fs::write(
        dir.join("scenario.json"),
        serde_json::to_string_pretty(scenario)?,
    )?;
    let mut summary = Summary::new(&scenario.name, &id, scenario.seed);
    let result = match &scenario.model {
        ModelConfig::LinearGaussian { .. } | ModelConfig::Trigonometric(_) => {
            run_filter(scenario, &dir, &mut summary)
        }
        ModelConfig::Kink(_) => run_direct(scenario, &dir, &mut summary),
        ModelConfig::VmoProbe { .. } => run_vmo(scenario, &mut summary),
    };
    if let Err(e) = result {
        log::error!("{id}: {e}");
        summary.errors.push(e.to_string());
    }
    summary.finish();
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(RunOutcome { id, dir, summary })
}

fn build_system(model: &ModelConfig, reference: bool) -> Result<SystemSpec, StageError> {
    Ok(match model {
        ModelConfig::LinearGaussian {
            d,
            d1,
            m,
            f,
            offset,
            h,
            theta,
            obs_theta,
            bound,
            delta,
        } => affine(&AffineParams {
            d: *d,
            k: d1 - d,
            m: *m,
            f: f.clone(),
            offset: offset.clone(),
            h: if reference {
                vec![0.0; h.len()]
            } else {
                h.clone()
            },
            theta: theta.clone(),
            obs_theta: obs_theta.clone(),
            bound: *bound,
            delta: *delta,
        })?,
        ModelConfig::Trigonometric(p) => {
            let mut p = p.clone();
            if reference {
                p.gain = 0.0;
                p.obs_amp = 0.0;
            }
            trigonometric(&p)?
        }
        _ => {
            return Err(StageError::Unsupported(
                "not a signal/observation model".into(),
            ))
        }
    })
}

fn linear_gaussian(s: &Scenario) -> Result<LinearGaussianSpec, StageError> {
    let ModelConfig::LinearGaussian {
        d,
        d1,
        m,
        f,
        offset,
        h,
        theta,
        obs_theta,
        ..
    } = &s.model
    else {
        return Err(StageError::Unsupported(
            "Kalman oracle needs a linear model".into(),
        ));
    };
    if offset.iter().any(|v| *v != 0.0) {
        return Err(StageError::Unsupported(
            "Kalman oracle does not take a drift offset".into(),
        ));
    }
    let (m0, p0) = match s.prior.as_ref() {
        Some(InitialLaw::Gaussian { mean, cov }) => (mean.clone(), cov.clone()),
        Some(InitialLaw::Point { x }) => (x.clone(), vec![0.0; d * d]),
        _ => {
            return Err(StageError::Unsupported(
                "Kalman oracle needs a Gaussian prior".into(),
            ))
        }
    };
    Ok(LinearGaussianSpec {
        d: *d,
        k: d1 - d,
        m: *m,
        f: f.clone(),
        h: h.clone(),
        theta: theta.clone(),
        obs_theta: obs_theta.clone(),
        m0,
        p0,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write_rows(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<(), StageError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.into_iter().map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

fn strided(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..len).filter(move |i| i % stride == 0 || i + 1 == len)
}

/// `sqrt(Σ (a - b)²) / sqrt(Σ b²)` over all entries.
pub fn relative_rms(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.iter().zip(y) {
            num += (u - v) * (u - v);
            den += v * v;
        }
    }
    (num / den).sqrt()
}

fn thin_trajectory(traj: &Trajectory, stride: usize) -> Trajectory {
    let keep: Vec<usize> = (0..traj.len())
        .filter(|&i| traj.steps[i] % stride == 0 || i + 1 == traj.len())
        .collect();
    Trajectory {
        steps: keep.iter().map(|&i| traj.steps[i]).collect(),
        states: keep.iter().map(|&i| traj.states[i].clone()).collect(),
        ..traj.clone()
    }
}

/// Compact per-replica results.
struct ReplicaResult {
    min_mass: f64,
    final_mass: f64,
    undershoot: f64,
    boundary_mass: f64,
    kalman: Option<(f64, f64)>,
    particle: Option<f64>,
    mass: Vec<f64>,
}

fn filter_replica(
    s: &Scenario,
    spec: &SystemSpec,
    sim: &SystemSpec,
    grid: &Grid,
    pi0: &FieldState,
    replica: usize,
    keep: bool,
) -> Result<
    (
        ReplicaResult,
        Option<(PathBundle, FilterOutput)>,
        Option<Oracles>,
    ),
    StageError,
> {
    let prior = s.prior.as_ref().expect("validated");
    let paths = simulate_replica(sim, prior, &s.y0(), s.dt, s.horizon, s.seed, replica as u64)?;
    let mut opts = s.filter.clone();
    if !keep {
        // only moments are needed; keep the first and last density
        opts.solver.stride = step_count(s.horizon, s.dt).unwrap_or(1).max(1);
    }
    let out = run_zakai(spec, &paths, pi0.clone(), grid, s.dt, &opts)?;
    let mut oracles = Oracles::default();
    let kalman = if s.oracles.kalman {
        let lg = linear_gaussian(s)?;
        let kb = kalman_bucy_solve(&lg, &paths, s.dt)?;
        let var_z: Vec<Vec<f64>> = out.covariance.clone();
        let r = (
            relative_rms(&out.mean, &kb.mean),
            relative_rms(&var_z, &kb.covariance),
        );
        oracles.kalman = Some(kb);
        Some(r)
    } else {
        None
    };
    let particle = if let Some(pc) = &s.oracles.particle {
        let pf = particle_filter_solve(
            spec,
            prior,
            &paths,
            s.dt,
            &ParticleOptions {
                particles: pc.particles,
                threshold: pc.threshold,
                seed: s.seed,
                replica: replica as u64,
                moment_stride: pc.moment_stride,
            },
        )?;
        let zm: Vec<Vec<f64>> = pf
            .times
            .iter()
            .map(|t| out.mean[(t / s.dt).round() as usize].clone())
            .collect();
        let r = relative_rms(&zm, &pf.mean);
        oracles.particle = Some(pf);
        Some(r)
    } else {
        None
    };
    let res = ReplicaResult {
        min_mass: out.min_mass(),
        final_mass: *out.mass.last().unwrap(),
        undershoot: out.max_relative_undershoot(),
        boundary_mass: out.boundary_mass.iter().cloned().fold(0.0, f64::max),
        kalman,
        particle,
        mass: out.mass.clone(),
    };
    Ok(if keep {
        (res, Some((paths, out)), Some(oracles))
    } else {
        (res, None, None)
    })
}

#[derive(Default)]
struct Oracles {
    kalman: Option<zakai_core::oracles::KalmanOutput>,
    particle: Option<zakai_core::oracles::ParticleOutput>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

fn run_filter(s: &Scenario, dir: &Path, summary: &mut Summary) -> Result<(), StageError> {
    let spec = build_system(&s.model, false)?;
    let sim = build_system(&s.model, s.reference_measure)?;
    let grid = Grid::new(spec.d(), s.grid.half_width, s.grid.n)?;
    let prior = s.prior.as_ref().expect("validated");
    let pi0 = initial_density(prior, &grid)?;

    let (first, kept, oracles) = filter_replica(s, &spec, &sim, &grid, &pi0, 0, true)?;
    let (paths, out) = kept.unwrap();
    let oracles = oracles.unwrap();
    let rest: Vec<ReplicaResult> = (1..s.replicas)
        .into_par_iter()
        .map(|r| filter_replica(s, &spec, &sim, &grid, &pi0, r, false).map(|x| x.0))
        .collect::<Result<_, _>>()?;
    let results: Vec<&ReplicaResult> = std::iter::once(&first).chain(rest.iter()).collect();

    write_filter_artifacts(s, dir, &spec, &paths, &out, &oracles, &results)?;

    let tol = &s.tolerances;
    let min_mass = results
        .iter()
        .map(|r| r.min_mass)
        .fold(f64::INFINITY, f64::min);
    summary.check(Check::new(
        "mass_positive",
        min_mass,
        Comparison::Above,
        0.0,
    ));
    if s.diagnostics.positivity {
        let u = results.iter().map(|r| r.undershoot).fold(0.0, f64::max);
        summary.check(Check::new(
            "relative_undershoot",
            u,
            Comparison::AtMost,
            tol.undershoot,
        ));
    }
    summary.metric(
        "boundary_mass",
        results.iter().map(|r| r.boundary_mass).fold(0.0, f64::max),
    );
    if s.replicas > 1 {
        let r = results.len() as f64;
        let m = mean(results.iter().map(|x| x.final_mass));
        let var = results
            .iter()
            .map(|x| (x.final_mass - m).powi(2))
            .sum::<f64>()
            / (r - 1.0);
        let se = (var / r).sqrt();
        summary.metric("final_mass_mean", m);
        summary.metric("final_mass_std_error", se);
        if s.reference_measure {
            summary.check(Check::new(
                "final_mass_deviation_in_std_errors",
                (m - 1.0).abs() / se,
                Comparison::AtMost,
                tol.mass_std_errors,
            ));
        }
    }
    if s.oracles.kalman {
        let em = mean(results.iter().map(|r| r.kalman.unwrap().0));
        let ev = mean(results.iter().map(|r| r.kalman.unwrap().1));
        summary.check(Check::new(
            "kalman_mean_relative_error",
            em,
            Comparison::AtMost,
            tol.kalman_mean,
        ));
        summary.check(Check::new(
            "kalman_variance_relative_error",
            ev,
            Comparison::AtMost,
            tol.kalman_variance,
        ));
        summary.metric(
            "kalman_mean_relative_error_max",
            results
                .iter()
                .map(|r| r.kalman.unwrap().0)
                .fold(0.0, f64::max),
        );
    }
    if s.oracles.particle.is_some() {
        let e = mean(results.iter().map(|r| r.particle.unwrap()));
        summary.check(Check::new(
            "particle_mean_relative_error",
            e,
            Comparison::AtMost,
            tol.particle_mean,
        ));
        summary.metric(
            "particle_mean_relative_error_max",
            results
                .iter()
                .map(|r| r.particle.unwrap())
                .fold(0.0, f64::max),
        );
    }
    if s.diagnostics.fokker_planck {
        let l1 = fokker_planck_l1(s, &out)?;
        summary.check(Check::new(
            "fokker_planck_l1",
            l1,
            Comparison::AtMost,
            tol.fokker_planck_l1,
        ));
    }

    let ddir = dir.join("diagnostics");
    if let Some(h) = &s.diagnostics.holder {
        let rep = holder_exponents(&out.pibar, h)?;
        write_json(
            File::create(ddir.join("holder.json"))?,
            &summary.id,
            s.seed,
            &rep,
        )?;
        holder_checks(summary, &rep, s);
    }
    if s.diagnostics.ito.is_some() || s.diagnostics.apriori.is_some() {
        if !spec.is_autonomous() {
            return Err(StageError::Unsupported(
                "Itô and a priori diagnostics need an autonomous model".into(),
            ));
        }
        let eq = filter_equation(&spec, 0.0, &s.y0(), &s.filter)?;
        let driver = observation_driver(&spec, &paths, &s.filter)?;
        structural_checks(
            s,
            summary,
            &eq,
            &grid,
            &pi0,
            &[driver],
            std::slice::from_ref(&out.pibar),
            &ddir,
        )?;
    }
    Ok(())
}

fn holder_checks(summary: &mut Summary, rep: &zakai_core::diagnostics::HolderReport, s: &Scenario) {
    let value =
        |f: &zakai_core::diagnostics::ExponentFit| if f.degenerate { f64::NAN } else { f.exponent };
    summary.check(Check::new(
        "holder_time_exponent",
        value(&rep.time),
        Comparison::AtLeast,
        s.tolerances.holder_time,
    ));
    summary.check(Check::new(
        "holder_space_exponent",
        value(&rep.space),
        Comparison::AtLeast,
        s.tolerances.holder_space,
    ));
    summary.metric("holder_time_band", rep.time.band);
    summary.metric("holder_space_band", rep.space.band);
}

/// Itô identity refinement and the a priori bound.
#[allow(clippy::too_many_arguments)]
fn structural_checks(
    s: &Scenario,
    summary: &mut Summary,
    eq: &DivergenceFormSpec,
    grid: &Grid,
    u0: &FieldState,
    drivers: &[Increments],
    trajectories: &[Trajectory],
    ddir: &Path,
) -> Result<(), StageError> {
    if let Some(ito) = &s.diagnostics.ito {
        let mut reports = Vec::new();
        for &p in &ito.exponents {
            let r = ito_refinement(
                eq,
                grid,
                u0,
                drivers,
                s.horizon,
                &s.filter.solver,
                p,
                ito.levels,
            )?;
            summary.check(Check::new(
                format!("ito_residual_slope_p{p}"),
                r.slope.unwrap_or(f64::NAN),
                Comparison::AtLeast,
                s.tolerances.ito_slope,
            ));
            summary.metric(
                format!("ito_max_residual_p{p}"),
                *r.max_residuals.last().unwrap(),
            );
            reports.push(r);
        }
        write_json(
            File::create(ddir.join("ito.json"))?,
            &summary.id,
            s.seed,
            &reports,
        )?;
    }
    if let Some(ap) = &s.diagnostics.apriori {
        let rep = apriori_bound_check(trajectories, eq, ap.p, s.horizon, ap.constant)?;
        summary.check(Check::new(
            "apriori_margin",
            rep.margin,
            Comparison::AtLeast,
            0.0,
        ));
        write_json(
            File::create(ddir.join("apriori.json"))?,
            &summary.id,
            s.seed,
            &rep,
        )?;
    }
    Ok(())
}

/// L¹ distance at the horizon between the normalized density and the
/// Gaussian transition law of a scalar linear signal.
fn fokker_planck_l1(s: &Scenario, out: &FilterOutput) -> Result<f64, StageError> {
    let ModelConfig::LinearGaussian {
        d: 1,
        f,
        offset,
        h,
        theta,
        ..
    } = &s.model
    else {
        return Err(StageError::Unsupported(
            "closed form needs a scalar linear model".into(),
        ));
    };
    if h.iter().any(|v| *v != 0.0) {
        return Err(StageError::Unsupported("closed form needs H = 0".into()));
    }
    let Some(InitialLaw::Gaussian { mean: m0, cov: p0 }) = &s.prior else {
        return Err(StageError::Unsupported(
            "closed form needs a Gaussian prior".into(),
        ));
    };
    let t = *out.times.last().unwrap();
    let (a, b) = (f[0], offset.first().copied().unwrap_or(0.0));
    let q: f64 = theta.iter().map(|v| v * v).sum();
    let (mean, var) = if a == 0.0 {
        (m0[0] + b * t, p0[0] + q * t)
    } else {
        let e = (a * t).exp();
        (
            m0[0] * e + b * (e - 1.0) / a,
            p0[0] * e * e + q * (e * e - 1.0) / (2.0 * a),
        )
    };
    let last = out.pibar.len() - 1;
    let u = out.normalized(last);
    let grid = &out.grid;
    let norm = (2.0 * std::f64::consts::PI * var).sqrt();
    Ok((0..grid.nodes())
        .map(|p| {
            let x = grid.point(p)[0];
            (u[p] - (-(x - mean).powi(2) / (2.0 * var)).exp() / norm).abs()
        })
        .sum::<f64>()
        * grid.h)
}

#[allow(clippy::too_many_arguments)]
fn write_filter_artifacts(
    s: &Scenario,
    dir: &Path,
    spec: &SystemSpec,
    paths: &PathBundle,
    out: &FilterOutput,
    oracles: &Oracles,
    results: &[&ReplicaResult],
) -> Result<(), StageError> {
    let d = spec.d();
    let stride = s.output.series_stride;
    if s.output.paths {
        paths
            .write_csv(File::create(dir.join("paths/replica-0000.csv"))?)
            .map_err(|e| StageError::Unsupported(e.to_string()))?;
    }
    let dens = thin_trajectory(&out.pibar, s.output.density_stride);
    write_snapshots_binary(
        BufWriter::new(File::create(dir.join("densities/pibar.bin"))?),
        &dens,
        s.output.paths.then_some(paths),
    )?;

    let mut header = vec!["t".to_string(), "mass".into()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    header.extend((0..d * d).map(|i| format!("cov_{}{}", i / d, i % d)));
    header.extend(["undershoot".into(), "peak".into(), "boundary_mass".into()]);
    write_rows(
        &dir.join("moments.csv"),
        &header,
        strided(out.times.len(), stride).map(|i| {
            let mut r = vec![out.times[i], out.mass[i]];
            r.extend(&out.mean[i]);
            r.extend(&out.covariance[i]);
            r.extend([out.undershoot[i], out.peak[i], out.boundary_mass[i]]);
            r
        }),
    )?;
    write_rows(
        &dir.join("mass.csv"),
        &["replica".into(), "t".into(), "mass".into()],
        results.iter().enumerate().flat_map(|(r, res)| {
            strided(res.mass.len(), stride)
                .map(move |i| vec![r as f64, out.times[i.min(out.times.len() - 1)], res.mass[i]])
                .collect::<Vec<_>>()
        }),
    )?;
    if s.filter.innovation {
        let inn = innovation_process(out, paths, spec)?;
        let k = inn.k;
        let mut header = vec!["t".to_string()];
        header.extend((0..k).map(|i| format!("innovation_{i}")));
        header.extend((0..k * k).map(|i| format!("qv_{}{}", i / k, i % k)));
        let mut cum = vec![0.0; k];
        let mut rows = Vec::new();
        for n in 0..=inn.steps() {
            if n > 0 {
                for i in 0..k {
                    cum[i] += inn.increments[(n - 1) * k + i];
                }
            }
            if n % stride == 0 || n == inn.steps() {
                let mut r = vec![n as f64 * inn.dt];
                r.extend(&cum);
                r.extend(&inn.quadratic_variation[n * k * k..(n + 1) * k * k]);
                rows.push(r);
            }
        }
        write_rows(&dir.join("innovation.csv"), &header, rows.into_iter())?;
    }
    if let Some(kb) = &oracles.kalman {
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean_{i}")));
        header.extend((0..d * d).map(|i| format!("cov_{}{}", i / d, i % d)));
        write_rows(
            &dir.join("oracle/kalman.csv"),
            &header,
            strided(kb.times.len(), stride).map(|i| {
                let mut r = vec![kb.times[i]];
                r.extend(&kb.mean[i]);
                r.extend(&kb.covariance[i]);
                r
            }),
        )?;
    }
    if let Some(pf) = &oracles.particle {
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean_{i}")));
        header.extend((0..d * d).map(|i| format!("cov_{}{}", i / d, i % d)));
        header.push("ess".into());
        write_rows(
            &dir.join("oracle/particle.csv"),
            &header,
            (0..pf.times.len()).map(|i| {
                let mut r = vec![pf.times[i]];
                r.extend(&pf.mean[i]);
                r.extend(&pf.covariance[i]);
                r.push(pf.ess[i]);
                r
            }),
        )?;
    }
    Ok(())
}

/// Divergence-form equation driven by Brownian channels.
fn run_direct(s: &Scenario, dir: &Path, summary: &mut Summary) -> Result<(), StageError> {
    let ModelConfig::Kink(params) = &s.model else {
        unreachable!()
    };
    let eq = kink(params);
    let grid = Grid::new(eq.d, s.grid.half_width, s.grid.n)?;
    let prior = s.prior.as_ref().expect("validated");
    let u0 = initial_density(prior, &grid)?;
    let steps = step_count(s.horizon, s.dt)?;
    let drivers: Vec<Increments> = (0..s.replicas)
        .map(|r| {
            Increments::brownian(
                eq.channels,
                steps,
                s.dt,
                StreamKey::new(s.seed, Domain::Driver, r as u64),
            )
        })
        .collect();
    let trajectories: Vec<Trajectory> = drivers
        .par_iter()
        .map(|dz| solve(&eq, &grid, u0.clone(), dz, s.horizon, &s.filter.solver))
        .collect::<Result<_, _>>()?;

    let first = &trajectories[0];
    write_snapshots_binary(
        BufWriter::new(File::create(dir.join("densities/u.bin"))?),
        &thin_trajectory(first, s.output.density_stride),
        None,
    )?;
    write_rows(
        &dir.join("moments.csv"),
        &["t".into(), "mass".into(), "min".into(), "max".into()],
        strided(first.len(), s.output.series_stride).map(|i| {
            let st = &first.states[i];
            vec![st.t, st.mass(&grid), st.min(), st.max_abs()]
        }),
    )?;
    write_rows(
        &dir.join("mass.csv"),
        &["replica".into(), "t".into(), "mass".into()],
        trajectories.iter().enumerate().flat_map(|(r, tr)| {
            strided(tr.len(), s.output.series_stride)
                .map(|i| vec![r as f64, tr.states[i].t, tr.states[i].mass(&grid)])
                .collect::<Vec<_>>()
        }),
    )?;

    let min_mass = trajectories
        .iter()
        .flat_map(|tr| tr.states.iter().map(|st| st.mass(&grid)))
        .fold(f64::INFINITY, f64::min);
    summary.check(Check::new(
        "mass_positive",
        min_mass,
        Comparison::Above,
        0.0,
    ));
    if s.diagnostics.positivity {
        let u = trajectories
            .iter()
            .flat_map(|tr| tr.states.iter())
            .map(|st| {
                let peak = st.max_abs();
                if peak > 0.0 {
                    (-st.min()).max(0.0) / peak
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        summary.check(Check::new(
            "relative_undershoot",
            u,
            Comparison::AtMost,
            s.tolerances.undershoot,
        ));
    }
    let ddir = dir.join("diagnostics");
    if let Some(h) = &s.diagnostics.holder {
        let rep = holder_exponents(first, h)?;
        write_json(
            File::create(ddir.join("holder.json"))?,
            &summary.id,
            s.seed,
            &rep,
        )?;
        holder_checks(summary, &rep, s);
    }
    structural_checks(s, summary, &eq, &grid, &u0, &drivers, &trajectories, &ddir)?;
    if let Some(dep) = &s.diagnostics.dependence {
        let rep = continuous_dependence_study(
            &eq,
            &dep.scales,
            &grid,
            &u0,
            &drivers[0],
            s.horizon,
            &s.filter.solver,
            dep.p,
            dep.quadrature_nodes,
        )?;
        let worst = rep
            .entries
            .windows(2)
            .map(|w| (w[1].w1p / w[0].w1p).max(w[1].sup_lp / w[0].sup_lp))
            .fold(0.0, f64::max);
        summary.check(Check::new(
            "dependence_worst_halving_ratio",
            worst,
            Comparison::AtMost,
            1.0 + s.tolerances.dependence_slack,
        ));
        write_json(
            File::create(ddir.join("dependence.json"))?,
            &summary.id,
            s.seed,
            &rep,
        )?;
    }
    Ok(())
}

fn run_vmo(s: &Scenario, summary: &mut Summary) -> Result<(), StageError> {
    let ModelConfig::VmoProbe { radius, quadrature } = &s.model else {
        unreachable!()
    };
    let rho = *radius;
    let origin = |_t: f64| vec![0.0];
    let window = (0.0, s.horizon.max(rho * rho));
    let flat = vmo_osc(
        &|t: f64, _x: &[f64]| 1.0 + t.sin(),
        rho,
        &origin,
        window,
        quadrature,
    )?;
    summary.check(Check::new(
        "vmo_x_independent",
        flat,
        Comparison::AtMost,
        0.0,
    ));
    let sign = vmo_osc(
        &|_t: f64, x: &[f64]| x[0].signum(),
        rho,
        &origin,
        window,
        quadrature,
    )?;
    summary.check(Check::new(
        "vmo_sign_error",
        (sign - 1.0).abs(),
        Comparison::AtMost,
        s.tolerances.vmo,
    ));
    let lin = vmo_osc(&|_t: f64, x: &[f64]| x[0], rho, &origin, window, quadrature)?;
    summary.check(Check::new(
        "vmo_linear_error",
        (lin - 0.5 * rho).abs(),
        Comparison::AtMost,
        s.tolerances.vmo,
    ));
    Ok(())
}
