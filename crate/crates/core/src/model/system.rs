use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use super::ModelError;

/// `(t, point, out)`: writes a vector or a row-major matrix into `out`.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, point) -> value`.
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, z, i, out)`: the `x^i`-derivative of a row-major matrix field.
pub type PartialFn = Arc<dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync>;

pub(crate) type Buf = SmallVec<[f64; 16]>;

pub(crate) fn buf(len: usize) -> Buf {
    SmallVec::from_elem(0.0, len)
}

/// How x-derivatives of the signal diffusion are obtained.
#[derive(Clone)]
pub enum Derivative {
    /// The field does not depend on x; every derivative vanishes.
    Zero,
    /// Centered differences with the spacing chosen by the caller.
    FiniteDifference,
    Analytic(PartialFn),
}

impl fmt::Debug for Derivative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivative::Zero => f.write_str("Zero"),
            Derivative::FiniteDifference => f.write_str("FiniteDifference"),
            Derivative::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// The partially observed diffusion `z = (x, y)`:
///
/// ```text
/// dx = b(t, z) dt + θ(t, z) dw
/// dy = B(t, z) dt + Θ(t, y) dw
/// ```
///
/// with `x ∈ ℝ^d`, `y ∈ ℝ^{d1-d}` and `w` an m-dimensional Wiener process.
/// Matrices are row-major; callbacks receive `z = (x, y)` except `Θ`, which
/// receives `y` only.
#[derive(Clone)]
pub struct SystemSpec {
    d: usize,
    d1: usize,
    m: usize,
    /// Bound and Lipschitz constant `K`.
    pub bound: f64,
    /// Ellipticity constant `δ`.
    pub delta: f64,
    drift: StateFn,
    signal_diffusion: StateFn,
    obs_drift: StateFn,
    obs_diffusion: StateFn,
    signal_diffusion_dx: Derivative,
    autonomous: bool,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("d", &self.d)
            .field("d1", &self.d1)
            .field("m", &self.m)
            .field("bound", &self.bound)
            .field("delta", &self.delta)
            .field("signal_diffusion_dx", &self.signal_diffusion_dx)
            .field("autonomous", &self.autonomous)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        d1: usize,
        m: usize,
        bound: f64,
        delta: f64,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        signal_diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        obs_drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        obs_diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self, ModelError> {
        if d == 0 {
            return Err(ModelError::Dimension("d must be positive".into()));
        }
        if d1 <= d {
            return Err(ModelError::Dimension(format!(
                "d1 = {d1} must exceed d = {d}"
            )));
        }
        if m == 0 {
            return Err(ModelError::Dimension("m must be positive".into()));
        }
        if !(bound > 0.0) || !(delta > 0.0) {
            return Err(ModelError::Dimension(
                "bound K and delta must be positive".into(),
            ));
        }
        Ok(Self {
            d,
            d1,
            m,
            bound,
            delta,
            drift: Arc::new(drift),
            signal_diffusion: Arc::new(signal_diffusion),
            obs_drift: Arc::new(obs_drift),
            obs_diffusion: Arc::new(obs_diffusion),
            signal_diffusion_dx: Derivative::FiniteDifference,
            autonomous: false,
        })
    }

    pub fn with_signal_diffusion_dx(mut self, derivative: Derivative) -> Self {
        self.signal_diffusion_dx = derivative;
        self
    }

    /// Declares that no coefficient depends on `t` or `y`, so filter
    /// operators can be assembled once per run.
    pub fn autonomous(mut self, yes: bool) -> Self {
        self.autonomous = yes;
        self
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    /// Observation dimension `d1 - d`.
    pub fn k(&self) -> usize {
        self.d1 - self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn signal_diffusion_dx(&self) -> &Derivative {
        &self.signal_diffusion_dx
    }

    fn join(&self, x: &[f64], y: &[f64]) -> Buf {
        debug_assert_eq!(x.len(), self.d);
        debug_assert_eq!(y.len(), self.k());
        let mut z = Buf::with_capacity(self.d1);
        z.extend_from_slice(x);
        z.extend_from_slice(y);
        z
    }

    /// `b(t, x, y)` into `out` (length d).
    pub fn drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(t, &self.join(x, y), out)
    }

    /// `θ(t, x, y)` into `out` (d × m).
    pub fn signal_diffusion(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.signal_diffusion)(t, &self.join(x, y), out)
    }

    /// `B(t, x, y)` into `out` (length d1 - d).
    pub fn obs_drift(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.obs_drift)(t, &self.join(x, y), out)
    }

    /// `Θ(t, y)` into `out` ((d1 - d) × m).
    pub fn obs_diffusion(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.obs_diffusion)(t, y, out)
    }

    /// `D_{x^i} θ(t, x, y)` when the spec carries an analytic or zero
    /// derivative; `None` means the caller must difference.
    pub fn signal_diffusion_partial(
        &self,
        t: f64,
        x: &[f64],
        y: &[f64],
        i: usize,
        out: &mut [f64],
    ) -> Option<()> {
        match &self.signal_diffusion_dx {
            Derivative::Zero => {
                out.iter_mut().for_each(|v| *v = 0.0);
                Some(())
            }
            Derivative::Analytic(f) => {
                f(t, &self.join(x, y), i, out);
                Some(())
            }
            Derivative::FiniteDifference => None,
        }
    }
}
