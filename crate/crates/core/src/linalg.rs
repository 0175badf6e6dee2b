//! Small dense helpers on row-major slices.

use nalgebra::{DMatrix, SymmetricEigen};

/// Smallest and largest eigenvalue of the symmetric part of an `n × n`
/// row-major matrix.
pub fn sym_eig_extremes(mat: &[f64], n: usize) -> (f64, f64) {
    debug_assert_eq!(mat.len(), n * n);
    match n {
        0 => (0.0, 0.0),
        1 => (mat[0], mat[0]),
        2 => {
            let a = mat[0];
            let c = mat[3];
            let b = 0.5 * (mat[1] + mat[2]);
            let mean = 0.5 * (a + c);
            let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mean - r, mean + r)
        }
        _ => {
            let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (mat[i * n + j] + mat[j * n + i]));
            let eig = SymmetricEigen::new(m);
            let min = eig
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let max = eig
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        }
    }
}

/// `out = A Bᵀ` for row-major `A` (r × k) and `B` (c × k).
pub fn mul_transpose(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[j * k + l];
            }
            out[i * c + j] = acc;
        }
    }
}

/// `out = A B` for row-major `A` (r × k) and `B` (k × c).
pub fn mul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = acc;
        }
    }
}

pub fn to_dmatrix(mat: &[f64], r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, mat)
}

/// Row-major copy of a matrix.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Correctly rounded sum of a sequence (Shewchuk's exact partials).
///
/// The result depends only on the multiset of inputs, never on their order.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round the partials back to one double, correcting the final half-way case.
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}
