use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::SolverError;

pub type Index = SmallVec<[usize; 4]>;

/// Uniform grid on `[-L, L]^d` with `n` nodes per axis; node `i` along an
/// axis sits at `-L + i h`. Flat indices run with the first axis fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d: usize,
    pub half_width: f64,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(d: usize, half_width: f64, n: usize) -> Result<Self, SolverError> {
        if d == 0 || n < 3 || !(half_width > 0.0) || !half_width.is_finite() {
            return Err(SolverError::BadGrid(format!(
                "need d >= 1, n >= 3, L > 0; got d = {d}, n = {n}, L = {half_width}"
            )));
        }
        if n.checked_pow(d as u32).is_none() {
            return Err(SolverError::AssemblyOverflow {
                nodes: usize::MAX,
                budget: usize::MAX,
            });
        }
        Ok(Self {
            d,
            half_width,
            n,
            h: 2.0 * half_width / (n - 1) as f64,
        })
    }

    pub fn nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn multi_index(&self, mut idx: usize) -> Index {
        let mut out = Index::new();
        for _ in 0..self.d {
            out.push(idx % self.n);
            idx /= self.n;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, i| acc * self.n + i)
    }

    /// Coordinate of the (possibly half-integer) position `i` along an axis.
    /// Face midpoints use `i + 0.5` so both adjacent nodes see the same point.
    pub fn axis_coord(&self, i: f64) -> f64 {
        -self.half_width + i * self.h
    }

    pub fn coords(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for o in out.iter_mut().take(self.d) {
            *o = self.axis_coord((rem % self.n) as f64);
            rem /= self.n;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        self.coords(idx, &mut x);
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary_distance(idx) == 0
    }

    /// Smallest number of steps from the node to the boundary layer.
    pub fn boundary_distance(&self, idx: usize) -> usize {
        let mut rem = idx;
        let mut best = usize::MAX;
        for _ in 0..self.d {
            let i = rem % self.n;
            rem /= self.n;
            best = best.min(i.min(self.n - 1 - i));
        }
        best
    }

    /// Nodal values of `f`.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        (0..self.nodes())
            .map(|p| {
                self.coords(p, &mut x);
                f(&x)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_round_trip() {
        let g = Grid::new(3, 1.0, 5).unwrap();
        assert_eq!(g.nodes(), 125);
        for p in [0, 7, 63, 124] {
            assert_eq!(g.flat_index(&g.multi_index(p)), p);
        }
        assert_eq!(g.point(1), vec![-0.5, -1.0, -1.0]);
        assert!(g.is_boundary(0));
        assert!(!g.is_boundary(g.flat_index(&[1, 2, 3])));
        assert_eq!(g.boundary_distance(g.flat_index(&[2, 2, 2])), 2);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(1, 1.0, 2).is_err());
        assert!(Grid::new(1, 0.0, 10).is_err());
        assert!(Grid::new(0, 1.0, 10).is_err());
    }
}
