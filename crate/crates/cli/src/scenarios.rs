//! Built-in scenarios.

use zakai_core::diagnostics::HolderOptions;
use zakai_core::model::families::{KinkParams, TrigonometricParams};
use zakai_core::model::{InitialLaw, VmoQuadrature};

use crate::config::{
    DependenceConfig, DiagnosticsConfig, GridConfig, ItoConfig, ModelConfig, OracleConfig,
    OutputConfig, ParticleConfig, Scenario,
};

pub const BUILTIN: &[(&str, &str)] = &[
    (
        "lg1d",
        "linear-Gaussian, correlated signal and observation noise",
    ),
    (
        "lgu1d",
        "linear-Gaussian, uncorrelated noise, Kalman and particle oracles",
    ),
    (
        "ou-fp",
        "Ornstein-Uhlenbeck signal with uninformative observations",
    ),
    (
        "kink",
        "divergence-form equation with a Lipschitz kink in the diffusion",
    ),
    ("nl1d", "nonlinear drift and sensor, particle-filter oracle"),
    (
        "vmo-probe",
        "oscillation functionals on analytic coefficients",
    ),
];

fn linear(theta: [f64; 2], h: f64) -> ModelConfig {
    ModelConfig::LinearGaussian {
        d: 1,
        d1: 2,
        m: 2,
        f: vec![-1.0],
        offset: vec![],
        h: vec![h],
        theta: theta.to_vec(),
        obs_theta: vec![0.0, 1.0],
        bound: 10.0,
        delta: 0.3,
    }
}

fn base(name: &str, model: ModelConfig) -> Scenario {
    Scenario {
        name: name.into(),
        model,
        prior: Some(InitialLaw::Gaussian {
            mean: vec![1.0],
            cov: vec![0.25],
        }),
        y0: None,
        grid: GridConfig {
            half_width: 8.0,
            n: 801,
        },
        dt: 1e-4,
        horizon: 1.0,
        seed: 0,
        replicas: 1,
        reference_measure: false,
        filter: Default::default(),
        oracles: OracleConfig::default(),
        diagnostics: DiagnosticsConfig::default(),
        tolerances: Default::default(),
        output: OutputConfig {
            density_stride: 100,
            series_stride: 10,
            paths: true,
        },
    }
}

pub fn builtin(name: &str) -> Option<Scenario> {
    let s = match name {
        "lg1d" => Scenario {
            oracles: OracleConfig {
                kalman: true,
                particle: None,
            },
            ..base(name, linear([1.0, 0.5], 1.0))
        },
        "lgu1d" => Scenario {
            dt: 1e-3,
            oracles: OracleConfig {
                kalman: true,
                particle: Some(ParticleConfig {
                    particles: 20_000,
                    ..Default::default()
                }),
            },
            ..base(name, linear([1.0, 0.0], 1.0))
        },
        "ou-fp" => Scenario {
            diagnostics: DiagnosticsConfig {
                fokker_planck: true,
                ..Default::default()
            },
            ..base(name, linear([1.0, 0.0], 0.0))
        },
        "kink" => Scenario {
            prior: Some(InitialLaw::Gaussian {
                mean: vec![0.0],
                cov: vec![0.25],
            }),
            grid: GridConfig {
                half_width: 6.0,
                n: 241,
            },
            dt: 1e-3,
            horizon: 0.4,
            replicas: 4,
            diagnostics: DiagnosticsConfig {
                positivity: true,
                fokker_planck: false,
                ito: Some(ItoConfig::default()),
                holder: Some(HolderOptions::default()),
                apriori: Some(Default::default()),
                dependence: Some(DependenceConfig::default()),
            },
            ..base(
                name,
                ModelConfig::Kink(KinkParams {
                    base: 1.0,
                    slope: 0.5,
                    convection: 0.2,
                    noise_gradient: 0.3,
                    noise_reaction: 0.5,
                    bound: 10.0,
                    delta: 0.5,
                }),
            )
        },
        "nl1d" => Scenario {
            prior: Some(InitialLaw::Gaussian {
                mean: vec![0.5],
                cov: vec![0.5],
            }),
            dt: 1e-3,
            oracles: OracleConfig {
                kalman: false,
                particle: Some(ParticleConfig::default()),
            },
            ..base(
                name,
                ModelConfig::Trigonometric(TrigonometricParams {
                    d: 1,
                    offset: 1.0,
                    rate: 1.0,
                    amp: 1.0,
                    freq: 2.0,
                    gain: 1.0,
                    obs_amp: 0.5,
                    obs_freq: 1.0,
                    signal_sd: 1.0,
                    obs_sd: 0.5,
                    bound: 10.0,
                    delta: 0.1,
                }),
            )
        },
        "vmo-probe" => Scenario {
            prior: None,
            grid: GridConfig {
                half_width: 1.0,
                n: 3,
            },
            dt: 1.0,
            horizon: 1.0,
            diagnostics: DiagnosticsConfig {
                positivity: false,
                ..Default::default()
            },
            ..base(
                name,
                ModelConfig::VmoProbe {
                    radius: 1.0,
                    quadrature: VmoQuadrature::fine(),
                },
            )
        },
        _ => return None,
    };
    Some(s)
}
