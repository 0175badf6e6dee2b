//! Numerical counterparts of the structural properties of the equation: the
//! Itô identity for `‖u‖_p^p`, the a priori bound, Hölder exponents and
//! continuous dependence on the coefficients.

mod apriori;
mod dependence;
mod holder;
mod ito;
mod terms;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::spde_solver::SolverError;

pub use apriori::{apriori_bound_check, calibrate_constant, AprioriReport, APRIORI_CONSTANT};
pub use dependence::{
    continuous_dependence_study, gauss_hermite, mollify, DependenceEntry, DependenceReport,
};
pub use holder::{holder_exponents, ExponentFit, HolderOptions, HolderReport};
pub use ito::{ito_refinement, ito_residual, ItoRefinement, ItoReport, MAX_EXPONENT};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("grids are not aligned: {0}")]
    MisalignedGrids(String),
    #[error("exponent p = {p} outside [2, {cap}]")]
    Exponent { p: f64, cap: f64 },
    #[error("need at least {needed} dyadic levels, have {have}")]
    InsufficientScales { needed: usize, have: usize },
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A report tagged with the scenario it came from.
#[derive(Clone, Debug, Serialize)]
pub struct Tagged<'a, T: Serialize> {
    pub scenario: &'a str,
    pub seed: u64,
    pub report: &'a T,
}

pub fn write_json<W: Write, T: Serialize>(
    w: W,
    scenario: &str,
    seed: u64,
    report: &T,
) -> Result<(), DiagnosticsError> {
    serde_json::to_writer_pretty(
        w,
        &Tagged {
            scenario,
            seed,
            report,
        },
    )?;
    Ok(())
}

/// One line per `(scenario, check, value)`.
pub fn write_margin_table<W: Write>(
    w: W,
    rows: &[(String, String, f64)],
) -> Result<(), DiagnosticsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "check", "value"])
        .map_err(|e| DiagnosticsError::Input(e.to_string()))?;
    for (s, c, v) in rows {
        out.write_record([s.as_str(), c.as_str(), &format!("{v:?}")])
            .map_err(|e| DiagnosticsError::Input(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares slope of `ys` against `xs`, its standard error and the
/// half-width of the 95% band.
pub(crate) fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    if xs.len() < 3 {
        return (slope, f64::NAN, f64::NAN);
    }
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, n - 2.0)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    (slope, se, q * se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x - 1.0).collect();
        let (s, se, band) = fit_slope(&xs, &ys);
        assert!((s - 0.5).abs() < 1e-14);
        assert!(se < 1e-12 && band < 1e-10);
    }

    #[test]
    fn band_uses_student_quantile() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.1, 0.9, 2.2, 2.8, 4.1];
        let (_, se, band) = fit_slope(&xs, &ys);
        // t_{0.975, 3} = 3.182446
        assert!((band / se - 3.182446).abs() < 1e-5);
    }

    #[test]
    fn margin_table_round_trips_values() {
        let mut buf = Vec::new();
        write_margin_table(&mut buf, &[("lg1d".into(), "apriori".into(), 0.1 + 0.2)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("lg1d,apriori,0.30000000000000004"));
    }
}
