//! Scenario configuration: JSON with dot-path overrides and a content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use zakai_core::diagnostics::{HolderOptions, APRIORI_CONSTANT};
use zakai_core::model::families::{KinkParams, TrigonometricParams};
use zakai_core::model::{InitialLaw, VmoQuadrature};
use zakai_core::zakai::ZakaiOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse {
        path: String,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("override `{0}` is not of the form key=value")]
    Override(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: Option<InitialLaw>,
    /// Initial observation; zeros when absent.
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    pub grid: GridConfig,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    /// Simulate observations with zero sensor function (the reference
    /// measure); the filter still uses the model's sensor function.
    #[serde(default)]
    pub reference_measure: bool,
    #[serde(default)]
    pub filter: ZakaiOptions,
    #[serde(default)]
    pub oracles: OracleConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `dx = (F x + offset) dt + θ dw`, `dy = H x dt + Θ dw`.
    LinearGaussian {
        d: usize,
        d1: usize,
        m: usize,
        f: Vec<f64>,
        #[serde(default)]
        offset: Vec<f64>,
        h: Vec<f64>,
        theta: Vec<f64>,
        obs_theta: Vec<f64>,
        bound: f64,
        delta: f64,
    },
    Trigonometric(TrigonometricParams),
    /// A divergence-form equation solved directly, driven by Brownian noise.
    Kink(KinkParams),
    /// Oscillation functionals on analytic test coefficients.
    VmoProbe {
        radius: f64,
        #[serde(default = "VmoQuadrature::fine")]
        quadrature: VmoQuadrature,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub kalman: bool,
    pub particle: Option<ParticleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleConfig {
    pub particles: usize,
    pub threshold: f64,
    pub moment_stride: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            particles: 100_000,
            threshold: 0.5,
            moment_stride: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub positivity: bool,
    /// Compare against the Gaussian transition density (linear models with
    /// `H = 0`, d = 1).
    pub fokker_planck: bool,
    pub ito: Option<ItoConfig>,
    pub holder: Option<HolderOptions>,
    pub apriori: Option<AprioriConfig>,
    pub dependence: Option<DependenceConfig>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            positivity: true,
            fokker_planck: false,
            ito: None,
            holder: None,
            apriori: None,
            dependence: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoConfig {
    pub exponents: Vec<f64>,
    pub levels: usize,
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self {
            exponents: vec![2.0, 4.0],
            levels: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AprioriConfig {
    pub p: f64,
    pub constant: f64,
}

impl Default for AprioriConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            constant: APRIORI_CONSTANT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DependenceConfig {
    pub scales: Vec<f64>,
    pub p: f64,
    pub quadrature_nodes: usize,
}

impl Default for DependenceConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.4, 0.2, 0.1, 0.05],
            p: 2.0,
            quadrature_nodes: 24,
        }
    }
}

/// Pass thresholds of the numeric checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub kalman_mean: f64,
    pub kalman_variance: f64,
    pub particle_mean: f64,
    pub undershoot: f64,
    pub mass_std_errors: f64,
    pub fokker_planck_l1: f64,
    pub ito_slope: f64,
    pub holder_time: f64,
    pub holder_space: f64,
    pub dependence_slack: f64,
    pub vmo: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kalman_mean: 0.02,
            kalman_variance: 0.05,
            particle_mean: 0.05,
            undershoot: 1e-6,
            mass_std_errors: 3.0,
            fokker_planck_l1: 1e-3,
            ito_slope: 0.4,
            holder_time: 0.4,
            holder_space: 0.85,
            dependence_slack: 0.1,
            vmo: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write every `density_stride`-th filter density.
    pub density_stride: usize,
    /// Write every `series_stride`-th row of the time series.
    pub series_stride: usize,
    pub paths: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            density_stride: 100,
            series_stride: 1,
            paths: true,
        }
    }
}

impl Scenario {
    /// Parses JSON text, then applies `key=value` overrides (dot paths; the
    /// value is read as JSON and falls back to a string).
    pub fn from_json(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| parse_error(origin, &e))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let scenario: Scenario = if overrides.is_empty() {
            // straight from the text so errors carry a line and column
            serde_json::from_str(text)
        } else {
            serde_json::from_value(value)
        }
        .map_err(|e| parse_error(origin, &e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads a file, or a built-in scenario when `source` names one and no
    /// such file exists.
    pub fn load(source: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let path = Path::new(source);
        if !path.exists() {
            if let Some(s) = crate::scenarios::builtin(source) {
                let text = serde_json::to_string(&s).expect("built-in scenarios serialize");
                return Self::from_json(&text, source, overrides);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: source.into(),
            source: e,
        })?;
        Self::from_json(&text, source, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(field("name", "must not be empty"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(field("dt", "must be positive"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(field("horizon", "must be non-negative"));
        }
        if self.replicas == 0 {
            return Err(field("replicas", "must be at least 1"));
        }
        if !(self.grid.half_width > 0.0) {
            return Err(field("grid.half_width", "must be positive"));
        }
        if self.grid.n < 3 {
            return Err(field("grid.n", "need at least 3 nodes"));
        }
        if self.output.density_stride == 0 {
            return Err(field("output.density_stride", "must be positive"));
        }
        if self.output.series_stride == 0 {
            return Err(field("output.series_stride", "must be positive"));
        }
        let d = match &self.model {
            ModelConfig::LinearGaussian {
                d,
                d1,
                m,
                f,
                offset,
                h,
                theta,
                obs_theta,
                ..
            } => {
                if *d == 0 {
                    return Err(field("model.d", "must be positive"));
                }
                if d1 <= d {
                    return Err(field("model.d1", format!("d1 = {d1} must exceed d = {d}")));
                }
                let k = d1 - d;
                for (name, v, len) in [
                    ("model.f", f, d * d),
                    ("model.h", h, k * d),
                    ("model.theta", theta, d * m),
                    ("model.obs_theta", obs_theta, k * m),
                ] {
                    if v.len() != len {
                        return Err(field(
                            name,
                            format!("has {} entries, expected {len}", v.len()),
                        ));
                    }
                }
                if !offset.is_empty() && offset.len() != *d {
                    return Err(field("model.offset", format!("expected {d} entries")));
                }
                if let Some(y0) = &self.y0 {
                    if y0.len() != k {
                        return Err(field("y0", format!("expected {k} entries")));
                    }
                }
                Some(*d)
            }
            ModelConfig::Trigonometric(p) => {
                if p.d == 0 {
                    return Err(field("model.d", "must be positive"));
                }
                Some(p.d)
            }
            ModelConfig::Kink(_) => Some(1),
            ModelConfig::VmoProbe { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(field("model.radius", "must be positive"));
                }
                None
            }
        };
        if let Some(d) = d {
            let prior = self
                .prior
                .as_ref()
                .ok_or_else(|| field("prior", "required for this model"))?;
            if prior.dim() != d {
                return Err(field(
                    "prior",
                    format!("dimension {} differs from d = {d}", prior.dim()),
                ));
            }
            prior
                .validate()
                .map_err(|e| field("prior", e.to_string()))?;
        }
        if let Some(pf) = &self.oracles.particle {
            if pf.particles == 0 {
                return Err(field("oracles.particle.particles", "must be positive"));
            }
        }
        if let Some(dep) = &self.diagnostics.dependence {
            if dep.scales.windows(2).any(|w| w[1] >= w[0]) {
                return Err(field("diagnostics.dependence.scales", "must be decreasing"));
            }
        }
        if let Some(ito) = &self.diagnostics.ito {
            if ito.levels < 2 {
                return Err(field("diagnostics.ito.levels", "need at least 2"));
            }
        }
        Ok(())
    }

    /// Name plus the first 12 hex digits of the SHA-256 of the canonical
    /// JSON (sorted keys, no whitespace).
    pub fn id(&self) -> String {
        let canonical = serde_json::to_value(self).expect("scenario serializes");
        let digest = Sha256::digest(serde_json::to_string(&canonical).unwrap().as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.name)
    }

    pub fn y0(&self) -> Vec<f64> {
        match (&self.y0, &self.model) {
            (Some(y), _) => y.clone(),
            (None, ModelConfig::LinearGaussian { d, d1, .. }) => vec![0.0; d1 - d],
            (None, ModelConfig::Trigonometric(p)) => vec![0.0; p.d],
            _ => Vec::new(),
        }
    }
}

fn parse_error(origin: &str, e: &serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        path: origin.into(),
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    }
}

/// Sets `key` (dot path, numeric segments index arrays) to `value`.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*part).into(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| field(key, "expected an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| field(key, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else {
                    unreachable!()
                };
                if last {
                    map.insert((*part).into(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(field(key, format!("`{part}` is not inside an object"))),
        };
    }
    Ok(())
}
