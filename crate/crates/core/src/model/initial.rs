use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Law of the initial signal state `x_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Point {
        x: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    /// Product of one-dimensional bumps `exp(-1/(1 - r²))`, `r = |x_i - c_i| / w_i`:
    /// smooth with compact support.
    Bump {
        center: Vec<f64>,
        half_width: Vec<f64>,
    },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { x } => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Bump { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            InitialLaw::Point { .. } => Ok(()),
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                if cov.len() != d * d {
                    return Err(ModelError::Dimension(format!(
                        "gaussian covariance has {} entries, expected {}",
                        cov.len(),
                        d * d
                    )));
                }
                if Cholesky::new(DMatrix::from_row_slice(d, d, cov)).is_none() {
                    return Err(ModelError::NearSingular {
                        min_eigenvalue: 0.0,
                        floor: 0.0,
                    });
                }
                Ok(())
            }
            InitialLaw::Bump { center, half_width } => {
                if center.len() != half_width.len() || half_width.iter().any(|w| !(*w > 0.0)) {
                    return Err(ModelError::Dimension(
                        "bump needs one positive half width per coordinate".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Draws one sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            InitialLaw::Point { x } => x.clone(),
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                let l = Cholesky::new(DMatrix::from_row_slice(d, d, cov))
                    .expect("covariance validated as positive definite")
                    .l();
                let z =
                    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = l * z;
                mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
            }
            InitialLaw::Bump { center, half_width } => {
                // rejection from the bounding box; the bump peaks at e^{-1} per axis
                loop {
                    let x: Vec<f64> = center
                        .iter()
                        .zip(half_width)
                        .map(|(c, w)| c + w * (2.0 * rng.random::<f64>() - 1.0))
                        .collect();
                    let accept = rng.random::<f64>();
                    if accept <= self.unnormalized_bump(&x) / (-(center.len() as f64)).exp() {
                        return x;
                    }
                }
            }
        }
    }

    fn unnormalized_bump(&self, x: &[f64]) -> f64 {
        let InitialLaw::Bump { center, half_width } = self else {
            return 0.0;
        };
        let mut v = 1.0;
        for ((xi, c), w) in x.iter().zip(center).zip(half_width) {
            let r = (xi - c) / w;
            if r.abs() >= 1.0 {
                return 0.0;
            }
            v *= (-1.0 / (1.0 - r * r)).exp();
        }
        v
    }

    /// Density up to normalization; grid users renormalize by quadrature.
    /// A point mass has no density and yields `None`.
    pub fn unnormalized_density(&self, x: &[f64]) -> Option<f64> {
        match self {
            InitialLaw::Point { .. } => None,
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                let c = DMatrix::from_row_slice(d, d, cov);
                let chol = Cholesky::new(c)?;
                let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
                let sol = chol.solve(&diff);
                Some((-0.5 * diff.dot(&sol)).exp())
            }
            InitialLaw::Bump { .. } => Some(self.unnormalized_bump(x)),
        }
    }

    /// Mean of the law when available in closed form.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Point { x } => x.clone(),
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Bump { center, .. } => center.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};

    #[test]
    fn gaussian_samples_have_requested_moments() {
        let law = InitialLaw::Gaussian {
            mean: vec![1.0],
            cov: vec![0.25],
        };
        let key = StreamKey::new(3, Domain::InitialState, 0);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|i| law.sample(&mut key.at(i))[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 4.0 * (0.25f64 / n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.02);
    }

    #[test]
    fn bump_is_compactly_supported() {
        let law = InitialLaw::Bump {
            center: vec![0.5],
            half_width: vec![1.0],
        };
        assert_eq!(law.unnormalized_density(&[1.6]), Some(0.0));
        assert!(law.unnormalized_density(&[0.5]).unwrap() > 0.3);
        let key = StreamKey::new(1, Domain::InitialState, 0);
        for i in 0..200 {
            let x = law.sample(&mut key.at(i));
            assert!((x[0] - 0.5).abs() < 1.0);
        }
    }
}
