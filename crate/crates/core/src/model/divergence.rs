use std::fmt;
use std::sync::Arc;

use super::system::{ScalarFn, StateFn};

/// Data of the divergence-form equation
///
/// ```text
/// du = (L u + D_i f^i + f^0) dt + (Λ^k u + g^k) dZ^k
/// L u = D_j(a^{ij} D_i u + a^j u) + b^i D_i u + c u
/// Λ^k u = σ^{ik} D_i u + ν^k u
/// ```
///
/// Callbacks take `(t, x)`. Matrices are row-major: `a^{ij}` at `[i*d + j]`,
/// `σ^{ik}` at `[i*channels + k]`. Absent optional terms are zero.
#[derive(Clone)]
pub struct DivergenceFormSpec {
    pub d: usize,
    /// Number of driving noise channels `m'`.
    pub channels: usize,
    pub diffusion: StateFn,
    pub convection: Option<StateFn>,
    pub drift: Option<StateFn>,
    pub reaction: Option<ScalarFn>,
    pub noise_gradient: Option<StateFn>,
    pub noise_reaction: Option<StateFn>,
    pub flux_forcing: Option<StateFn>,
    pub source: Option<ScalarFn>,
    pub noise_forcing: Option<StateFn>,
    /// Coefficients and free terms do not depend on t.
    pub autonomous: bool,
    pub bound: f64,
    pub delta: f64,
}

impl fmt::Debug for DivergenceFormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DivergenceFormSpec")
            .field("d", &self.d)
            .field("channels", &self.channels)
            .field("convection", &self.convection.is_some())
            .field("drift", &self.drift.is_some())
            .field("reaction", &self.reaction.is_some())
            .field("noise_gradient", &self.noise_gradient.is_some())
            .field("noise_reaction", &self.noise_reaction.is_some())
            .field("flux_forcing", &self.flux_forcing.is_some())
            .field("source", &self.source.is_some())
            .field("noise_forcing", &self.noise_forcing.is_some())
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

impl DivergenceFormSpec {
    pub fn new(
        d: usize,
        channels: usize,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            d,
            channels,
            diffusion: Arc::new(diffusion),
            convection: None,
            drift: None,
            reaction: None,
            noise_gradient: None,
            noise_reaction: None,
            flux_forcing: None,
            source: None,
            noise_forcing: None,
            autonomous: false,
            bound: f64::INFINITY,
            delta: 0.0,
        }
    }

    pub fn with_convection(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.convection = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_drift(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_noise_gradient(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.noise_gradient = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_noise_reaction(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.noise_reaction = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_flux_forcing(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.flux_forcing = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_noise_forcing(
        mut self,
        f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.noise_forcing = Some(Arc::new(f) as StateFn);
        self
    }

    pub fn with_reaction(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.reaction = Some(Arc::new(f) as ScalarFn);
        self
    }

    pub fn with_source(mut self, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Arc::new(f) as ScalarFn);
        self
    }

    pub fn autonomous(mut self, yes: bool) -> Self {
        self.autonomous = yes;
        self
    }

    pub fn with_constants(mut self, bound: f64, delta: f64) -> Self {
        self.bound = bound;
        self.delta = delta;
        self
    }

    /// True when every noise coefficient and free noise term is absent.
    pub fn is_deterministic(&self) -> bool {
        self.channels == 0
            || (self.noise_gradient.is_none()
                && self.noise_reaction.is_none()
                && self.noise_forcing.is_none())
    }

    pub fn has_forcing(&self) -> bool {
        self.flux_forcing.is_some() || self.source.is_some() || self.noise_forcing.is_some()
    }

    /// Same coefficients with all free terms removed.
    pub fn without_forcing(&self) -> Self {
        let mut out = self.clone();
        out.flux_forcing = None;
        out.source = None;
        out.noise_forcing = None;
        out
    }

    /// `α^{ij} = ½ Σ_k σ^{ik} σ^{jk}` at `(t, x)`, row-major d × d.
    pub fn noise_correction(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(sigma) = &self.noise_gradient else {
            return;
        };
        let (d, m) = (self.d, self.channels);
        let mut s = vec![0.0; d * m];
        sigma(t, x, &mut s);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += s[i * m + k] * s[j * m + k];
                }
                out[i * d + j] = 0.5 * acc;
            }
        }
    }
}
