//! Compressed sparse rows and a Jacobi-preconditioned BiCGSTAB.

use rayon::prelude::*;

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Rows given as unsorted `(column, value)` lists; duplicates are summed
    /// in order of appearance.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in r {
                if c == last {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            rows: row_ptr.len() - 1,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn zeros(rows: usize) -> Self {
        Self {
            rows,
            row_ptr: vec![0; rows + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(r);
        c.iter().zip(v).map(|(j, a)| a * x[*j]).sum()
    }

    /// `out = A x`; rows are independent so the result is deterministic.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(r, o)| *o = self.row_dot(r, x));
    }

    pub fn apply_new(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply(x, &mut out);
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let (c, v) = self.row(r);
                c.iter()
                    .zip(v)
                    .find(|(j, _)| **j == r)
                    .map_or(0.0, |(_, a)| *a)
            })
            .collect()
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    pub fn row_abs_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().map(|v| v.abs()).sum()
    }

    /// `I - s A`.
    pub fn identity_minus(&self, s: f64) -> Csr {
        let rows = (0..self.rows)
            .map(|r| {
                let (c, v) = self.row(r);
                let mut out: Vec<(usize, f64)> =
                    c.iter().zip(v).map(|(j, a)| (*j, -s * a)).collect();
                out.push((r, 1.0));
                out
            })
            .collect();
        Csr::from_rows(rows)
    }

    /// `Σ_k w_k A_k` over matrices of equal shape.
    pub fn combine(parts: &[(&Csr, f64)], rows: usize) -> Csr {
        let rows = (0..rows)
            .map(|r| {
                let mut out = Vec::new();
                for (m, w) in parts {
                    let (c, v) = m.row(r);
                    out.extend(c.iter().zip(v).map(|(j, a)| (*j, w * a)));
                }
                out
            })
            .collect();
        Csr::from_rows(rows)
    }
}

/// Dot product with a fixed chunking so the rounding does not depend on the
/// thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` starting from the initial content of `x`.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveStats {
    let n = b.len();
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveStats {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = a.apply_new(x);
    r.par_iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut res = norm(&r) / bnorm;
    if res <= tol {
        return SolveStats {
            iterations: 0,
            relative_residual: res,
            converged: true,
        };
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((pi, ri), vi)| *pi = ri + beta * (*pi - omega * vi));
        y.par_iter_mut()
            .zip(&p)
            .zip(&inv_diag)
            .for_each(|((yi, pi), di)| *yi = pi * di);
        a.apply(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        s.par_iter_mut()
            .zip(&r)
            .zip(&v)
            .for_each(|((si, ri), vi)| *si = ri - alpha * vi);
        if norm(&s) / bnorm <= tol {
            x.par_iter_mut()
                .zip(&y)
                .for_each(|(xi, yi)| *xi += alpha * yi);
            res = norm(&s) / bnorm;
            return SolveStats {
                iterations: it,
                relative_residual: res,
                converged: true,
            };
        }
        z.par_iter_mut()
            .zip(&s)
            .zip(&inv_diag)
            .for_each(|((zi, si), di)| *zi = si * di);
        a.apply(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        x.par_iter_mut()
            .zip(&y)
            .zip(&z)
            .for_each(|((xi, yi), zi)| *xi += alpha * yi + omega * zi);
        r.par_iter_mut()
            .zip(&s)
            .zip(&t)
            .for_each(|((ri, si), ti)| *ri = si - omega * ti);
        res = norm(&r) / bnorm;
        if res <= tol {
            return SolveStats {
                iterations: it,
                relative_residual: res,
                converged: true,
            };
        }
    }
    // confirm with the true residual before giving up
    let mut tr = a.apply_new(x);
    tr.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let true_res = norm(&tr) / bnorm;
    SolveStats {
        iterations: max_iter,
        relative_residual: true_res,
        converged: true_res <= tol,
    }
}
