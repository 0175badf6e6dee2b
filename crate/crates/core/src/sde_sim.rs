//! Euler–Maruyama simulation of the partially observed system.

use std::io::{self, BufRead, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::container::{self, ContainerError};
use crate::model::{InitialLaw, SystemSpec};
use crate::rng::{Domain, Increments, StreamKey};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("coefficient {what} returned a non-finite value at t = {t}, z = {z:?}")]
    NonFinite {
        what: &'static str,
        t: f64,
        z: Vec<f64>,
    },
    #[error("horizon {horizon} is not an integer multiple of dt = {dt}")]
    StepMismatch { horizon: f64, dt: f64 },
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Simulated trajectories of `(x, y)` together with the Wiener increments
/// that produced them. Row `n` of `x`/`y` is the state at `t_n = n·dt`; row
/// `n` of `dw` drives the step `t_n → t_{n+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub dt: f64,
    pub seed: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dw: Vec<f64>,
}

impl PathBundle {
    pub fn steps(&self) -> usize {
        if self.m == 0 {
            (self.x.len() / self.d.max(1)).saturating_sub(1)
        } else {
            self.dw.len() / self.m
        }
    }

    pub fn d1(&self) -> usize {
        self.d + self.k
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn x_at(&self, n: usize) -> &[f64] {
        &self.x[n * self.d..(n + 1) * self.d]
    }

    pub fn y_at(&self, n: usize) -> &[f64] {
        &self.y[n * self.k..(n + 1) * self.k]
    }

    pub fn dw_at(&self, n: usize) -> &[f64] {
        &self.dw[n * self.m..(n + 1) * self.m]
    }

    /// `y_{n+1} - y_n`.
    pub fn dy_at(&self, n: usize) -> Vec<f64> {
        self.y_at(n + 1)
            .iter()
            .zip(self.y_at(n))
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn increments(&self) -> Increments {
        Increments::from_raw(self.m, self.dt, self.dw.clone())
    }

    /// Every `factor`-th state with the Wiener increments summed over each
    /// coarse step.
    pub fn thinned(&self, factor: usize) -> PathBundle {
        assert!(factor >= 1);
        let steps = self.steps() / factor;
        let pick = |v: &[f64], w: usize| -> Vec<f64> {
            (0..=steps)
                .flat_map(|n| v[n * factor * w..(n * factor + 1) * w].iter().cloned())
                .collect()
        };
        PathBundle {
            d: self.d,
            k: self.k,
            m: self.m,
            dt: self.dt * factor as f64,
            seed: self.seed,
            x: pick(&self.x, self.d),
            y: pick(&self.y, self.k),
            dw: self.increments().coarsen(factor).as_slice().to_vec(),
        }
    }

    /// Columnar CSV: `t, x1.., y1.., dw1..`; the last row has empty `dw`
    /// cells. A leading comment line carries the metadata.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        writeln!(
            w,
            "# d={} d1={} m={} steps={} dt={:?} seed={}",
            self.d,
            self.d1(),
            self.m,
            self.steps(),
            self.dt,
            self.seed
        )?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.d).map(|i| format!("x{i}")));
        header.extend((1..=self.k).map(|i| format!("y{i}")));
        header.extend((1..=self.m).map(|i| format!("dw{i}")));
        wr.write_record(&header)?;
        for n in 0..=self.steps() {
            let mut rec: Vec<String> = vec![format!("{:?}", self.time(n))];
            rec.extend(self.x_at(n).iter().map(|v| format!("{v:?}")));
            rec.extend(self.y_at(n).iter().map(|v| format!("{v:?}")));
            if n < self.steps() {
                rec.extend(self.dw_at(n).iter().map(|v| format!("{v:?}")));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), self.m));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<PathBundle, SimError> {
        let mut br = io::BufReader::new(r);
        let mut first = String::new();
        br.read_line(&mut first)?;
        let meta = parse_meta(&first)?;
        let field = |key: &str| -> Result<&str, SimError> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| SimError::Input(format!("csv metadata lacks {key}")))
        };
        let num = |key: &str| -> Result<usize, SimError> {
            field(key)?
                .parse()
                .map_err(|_| SimError::Input(format!("bad {key}")))
        };
        let (d, d1, m, steps) = (num("d")?, num("d1")?, num("m")?, num("steps")?);
        let dt: f64 = field("dt")?
            .parse()
            .map_err(|_| SimError::Input("bad dt".into()))?;
        let seed: u64 = field("seed")?
            .parse()
            .map_err(|_| SimError::Input("bad seed".into()))?;
        let k = d1 - d;
        let mut rd = csv::Reader::from_reader(br);
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut dw = Vec::new();
        let parse = |s: &str| -> Result<f64, SimError> {
            s.parse()
                .map_err(|_| SimError::Input(format!("bad number {s:?}")))
        };
        for (n, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != 1 + d1 + m {
                return Err(SimError::Input(format!("row {n} has {} cells", rec.len())));
            }
            for i in 0..d {
                x.push(parse(&rec[1 + i])?);
            }
            for i in 0..k {
                y.push(parse(&rec[1 + d + i])?);
            }
            if n < steps {
                for i in 0..m {
                    dw.push(parse(&rec[1 + d1 + i])?);
                }
            }
        }
        let out = PathBundle {
            d,
            k,
            m,
            dt,
            seed,
            x,
            y,
            dw,
        };
        if out.x.len() != (steps + 1) * d {
            return Err(SimError::Input("row count does not match steps".into()));
        }
        Ok(out)
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<(), SimError> {
        container::write(w, self, None)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<PathBundle, SimError> {
        Ok(container::read(r)?.0)
    }
}

fn parse_meta(line: &str) -> Result<Vec<(String, String)>, SimError> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| SimError::Input("missing metadata comment".into()))?;
    Ok(body
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize, SimError> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(SimError::Input(format!(
            "need dt > 0 and T >= 0, got dt = {dt}, T = {horizon}"
        )));
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(SimError::StepMismatch { horizon, dt });
    }
    Ok(n as usize)
}

/// Number of uniform steps of size `dt` in `[0, T]`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize, SimError> {
    steps_for(horizon, dt)
}

/// Euler–Maruyama run of the system driven by given increments; the same
/// `Δw` enters the signal and the observation line.
pub fn euler_maruyama(
    spec: &SystemSpec,
    x0: &[f64],
    y0: &[f64],
    dw: &Increments,
    seed: u64,
) -> Result<PathBundle, SimError> {
    let (d, k, m) = (spec.d(), spec.k(), spec.m());
    if x0.len() != d || y0.len() != k || dw.channels() != m {
        return Err(SimError::Input(format!(
            "dimension mismatch: x0 {}, y0 {}, dw channels {} for d = {d}, k = {k}, m = {m}",
            x0.len(),
            y0.len(),
            dw.channels()
        )));
    }
    let steps = dw.steps();
    let dt = dw.dt();
    let mut xs = Vec::with_capacity((steps + 1) * d);
    let mut ys = Vec::with_capacity((steps + 1) * k);
    xs.extend_from_slice(x0);
    ys.extend_from_slice(y0);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut b = vec![0.0; d];
    let mut th = vec![0.0; d * m];
    let mut bb = vec![0.0; k];
    let mut obs = vec![0.0; k * m];
    for n in 0..steps {
        let t = n as f64 * dt;
        spec.drift(t, &x, &y, &mut b);
        spec.signal_diffusion(t, &x, &y, &mut th);
        spec.obs_drift(t, &x, &y, &mut bb);
        spec.obs_diffusion(t, &y, &mut obs);
        for (what, v) in [("b", &b), ("theta", &th), ("B", &bb), ("Theta", &obs)] {
            if v.iter().any(|a| !a.is_finite()) {
                return Err(SimError::NonFinite {
                    what,
                    t,
                    z: x.iter().chain(&y).cloned().collect(),
                });
            }
        }
        let w = dw.step(n);
        for i in 0..d {
            let mut acc = b[i] * dt;
            for j in 0..m {
                acc += th[i * m + j] * w[j];
            }
            x[i] += acc;
        }
        for r in 0..k {
            let mut acc = bb[r] * dt;
            for j in 0..m {
                acc += obs[r * m + j] * w[j];
            }
            y[r] += acc;
        }
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&y);
    }
    Ok(PathBundle {
        d,
        k,
        m,
        dt,
        seed,
        x: xs,
        y: ys,
        dw: dw.as_slice().to_vec(),
    })
}

/// One replica of the system on `[0, T]`. The initial state is drawn from
/// its own stream, independent of every Wiener increment.
pub fn simulate_replica(
    spec: &SystemSpec,
    x0: &InitialLaw,
    y0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
    replica: u64,
) -> Result<PathBundle, SimError> {
    let steps = steps_for(horizon, dt)?;
    if x0.dim() != spec.d() {
        return Err(SimError::Input(
            "initial law has the wrong dimension".into(),
        ));
    }
    x0.validate()
        .map_err(|e| SimError::Input(format!("initial law: {e}")))?;
    let start = x0.sample(&mut StreamKey::new(seed, Domain::InitialState, replica).at(0));
    let dw = Increments::brownian(
        spec.m(),
        steps,
        dt,
        StreamKey::new(seed, Domain::Wiener, replica),
    );
    euler_maruyama(spec, &start, y0, &dw, seed)
}

pub fn simulate_system(
    spec: &SystemSpec,
    x0: &InitialLaw,
    y0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<PathBundle, SimError> {
    simulate_replica(spec, x0, y0, dt, horizon, seed, 0)
}

/// Independent replicas `0..count`, simulated in parallel.
pub fn simulate_replicas(
    spec: &SystemSpec,
    x0: &InitialLaw,
    y0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<PathBundle>, SimError> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| simulate_replica(spec, x0, y0, dt, horizon, seed, r))
        .collect()
}
