//! Experiment configuration files.
//!
//! A config is a TOML document with a `schema_version`, the master seed,
//! the model, an optional integrator and one optional section per
//! experiment. Sections that are absent take their defaults; sections for
//! other experiments are ignored. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use clap::ValueEnum;
use fluctlab_core::dynamics::IntegratorConfig;
use fluctlab_core::fluctuation::MIN_REPLICAS;
use fluctlab_core::variational::BasisSpec;
use fluctlab_core::{CouplingSpec, ModelParams, Monomial, Polynomial, Topology};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: &str = "fluctlab/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    DiffusionCoefficient,
    Fluctuations,
    CltVariances,
    BgResidual,
    SphereChecks,
    SpectralGap,
    EnsembleGap,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::DiffusionCoefficient => "diffusion-coefficient",
            ExperimentKind::Fluctuations => "fluctuations",
            ExperimentKind::CltVariances => "clt-variances",
            ExperimentKind::BgResidual => "bg-residual",
            ExperimentKind::SphereChecks => "sphere-checks",
            ExperimentKind::SpectralGap => "spectral-gap",
            ExperimentKind::EnsembleGap => "ensemble-gap",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    /// Must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default = "default_model")]
    pub model: ModelParams,
    /// Its `seed` is replaced by the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_coefficient: Option<DiffusionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluctuations: Option<FluctuationsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt_variances: Option<CltSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_residual: Option<BgSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sphere_checks: Option<SphereSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_gap: Option<SpectralSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_gap: Option<EnsembleSection>,
}

fn default_out() -> PathBuf {
    PathBuf::from("fluctlab-out")
}

fn default_model() -> ModelParams {
    ModelParams {
        n_sites: 32,
        y: 1.0,
        coupling: CouplingSpec::default(),
        topology: Topology::Periodic,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Independent Gaussians of variance `y²`.
    Equilibrium,
    /// Uniform on the sphere of radius `y√N`.
    Sphere,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub t_final: f64,
    pub sample_interval: f64,
    pub start: Start,
    /// Fourier modes of the fluctuation field to record (periodic chains).
    pub modes: Vec<u32>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            t_final: 10.0,
            sample_interval: 0.1,
            start: Start::Equilibrium,
            modes: vec![1],
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    /// Defaults to the basis suggested for the coupling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuationsSection {
    pub modes: Vec<u32>,
    pub samples: usize,
    /// Sweeps between recorded samples.
    pub sample_every: usize,
    /// Largest lag, in samples.
    pub max_lag: usize,
    /// Lags where `C(lag) < floor·C(0)` are left out of the decay fit.
    pub fit_floor: f64,
    /// Diffusion coefficient of the prediction; computed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
}

impl Default for FluctuationsSection {
    fn default() -> Self {
        FluctuationsSection {
            modes: vec![1, 2],
            samples: 4000,
            sample_every: 10,
            max_lag: 120,
            fit_floor: 0.1,
            a_hat: None,
            basis: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltSection {
    /// The chain has `2·half_n + 1` sites.
    pub half_n: usize,
    pub dt: f64,
    pub window: f64,
    pub windows_per_replica: usize,
    pub burn_in: f64,
    /// Sphere samples for the exact targets when the coupling is not
    /// constant.
    pub exact_samples: usize,
}

impl Default for CltSection {
    fn default() -> Self {
        CltSection {
            half_n: 4,
            dt: 0.05,
            window: 100.0,
            windows_per_replica: 40,
            burn_in: 10.0,
            exact_samples: 20_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BgSection {
    pub mode: u32,
    pub horizon: f64,
    pub burn_in: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
    /// Trial coefficients `[low, high]`, sampled at `a_points` points.
    /// Defaults to half and one and a half times the variational value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_range: Option<[f64; 2]>,
    pub a_points: usize,
}

impl Default for BgSection {
    fn default() -> Self {
        BgSection {
            mode: 1,
            horizon: 0.005,
            burn_in: 0.0,
            basis: None,
            a_range: None,
            a_points: 21,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSection {
    pub n: usize,
    pub radius: f64,
    pub samples: usize,
}

impl Default for SphereSection {
    fn default() -> Self {
        SphereSection {
            n: 6,
            radius: 1.0,
            samples: 20_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub sizes: Vec<usize>,
    pub mode: u32,
    pub dt: f64,
    /// Sampling interval is `N² / interval_divisor`.
    pub interval_divisor: f64,
    pub samples: usize,
    pub burn_in: f64,
    /// Also measure the Kac walk, in rotation events.
    pub kac: bool,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            sizes: vec![8, 12, 16, 24],
            mode: 1,
            dt: 0.05,
            interval_divisor: 400.0,
            samples: 10_000,
            burn_in: 0.0,
            kac: false,
        }
    }
}

/// One term `coeff · ∏ p_site^exp`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub coeff: f64,
    pub factors: Vec<(i32, u32)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub sizes: Vec<usize>,
    pub observable: Vec<TermConfig>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            sizes: vec![8, 16, 32, 64, 128, 256],
            observable: vec![TermConfig {
                coeff: 1.0,
                factors: vec![(0, 2), (1, 2)],
            }],
        }
    }
}

impl EnsembleSection {
    pub fn polynomial(&self) -> Polynomial {
        Polynomial::from_terms(
            self.observable
                .iter()
                .map(|t| (Monomial::new(t.factors.iter().copied()), t.coeff)),
        )
    }
}

/// Command-line values that replace config keys of the same name.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(usage(format!(
                "schema_version must be \"{SCHEMA_VERSION}\", got \"{}\"",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Applies the overrides, fills in the defaults for `kind` and
    /// validates the result.
    pub fn resolve(mut self, kind: ExperimentKind, overrides: &Overrides) -> Result<Self, CliError> {
        if let Some(k) = self.experiment {
            if k != kind {
                return Err(usage(format!(
                    "config is for experiment {} but {} was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        self.experiment = Some(kind);
        if let Some(s) = overrides.seed {
            self.seed = s;
        }
        if let Some(t) = overrides.threads {
            self.threads = Some(t);
        }
        if let Some(o) = &overrides.out {
            self.out = o.clone();
        }
        if self.threads == Some(0) {
            return Err(usage("threads must be at least 1"));
        }
        self.model.validate().map_err(|e| usage(e.to_string()))?;
        let (replicas, integrator) = match kind {
            ExperimentKind::Simulate => {
                let s = self.simulate.get_or_insert_with(Default::default);
                check(s.t_final >= 0.0 && s.sample_interval > 0.0, "simulate needs t_final ≥ 0 and sample_interval > 0")?;
                check(s.modes.iter().all(|&m| m > 0), "simulate.modes must be ≥ 1")?;
                (1, Some(IntegratorConfig::new(1e-3, false, 0)))
            }
            ExperimentKind::DiffusionCoefficient => {
                self.diffusion_coefficient.get_or_insert_with(Default::default);
                (1, None)
            }
            ExperimentKind::Fluctuations => {
                let s = self.fluctuations.get_or_insert_with(Default::default);
                check(!s.modes.is_empty() && s.modes.iter().all(|&m| m > 0), "fluctuations.modes must be nonempty and ≥ 1")?;
                check(s.samples > s.max_lag && s.sample_every > 0, "fluctuations needs samples > max_lag and sample_every ≥ 1")?;
                check(s.a_hat.is_none_or(|a| a > 0.0), "fluctuations.a_hat must be positive")?;
                check(self.model.topology == Topology::Periodic, "fluctuations needs a periodic chain")?;
                (64, Some(IntegratorConfig::new(5e-5, true, 0)))
            }
            ExperimentKind::CltVariances => {
                let s = self.clt_variances.get_or_insert_with(Default::default);
                check(s.half_n >= 1 && s.dt > 0.0 && s.window > 0.0 && s.windows_per_replica > 0, "clt_variances needs half_n ≥ 1, dt > 0, window > 0")?;
                (16, None)
            }
            ExperimentKind::BgResidual => {
                let s = self.bg_residual.get_or_insert_with(Default::default);
                check(s.mode > 0 && s.horizon > 0.0 && s.a_points >= 3, "bg_residual needs mode ≥ 1, horizon > 0, a_points ≥ 3")?;
                check(s.a_range.is_none_or(|[lo, hi]| lo < hi), "bg_residual.a_range must be increasing")?;
                check(self.model.topology == Topology::Periodic, "bg_residual needs a periodic chain")?;
                (64, Some(IntegratorConfig::new(5e-5, true, 0)))
            }
            ExperimentKind::SphereChecks => {
                let s = self.sphere_checks.get_or_insert_with(Default::default);
                check(s.n >= 6 && s.radius > 0.0 && s.samples >= 2, "sphere_checks needs n ≥ 6, radius > 0, samples ≥ 2")?;
                (1, None)
            }
            ExperimentKind::SpectralGap => {
                let s = self.spectral_gap.get_or_insert_with(Default::default);
                check(s.sizes.len() >= 2 && s.sizes.iter().all(|&n| n >= 3), "spectral_gap needs at least two sizes ≥ 3")?;
                check(s.mode > 0 && s.dt > 0.0 && s.interval_divisor > 0.0, "spectral_gap needs mode ≥ 1, dt > 0")?;
                (4, None)
            }
            ExperimentKind::EnsembleGap => {
                let s = self.ensemble_gap.get_or_insert_with(Default::default);
                check(!s.sizes.is_empty() && !s.observable.is_empty(), "ensemble_gap needs sizes and an observable")?;
                let sites = s.polynomial().sites();
                check(sites.iter().all(|&x| x >= 0), "ensemble_gap observable sites must be ≥ 0")?;
                check(s.sizes.iter().all(|&n| n >= 3 && n >= sites.len()), "ensemble_gap sizes must cover the observable")?;
                (1, None)
            }
        };
        let replicas = *self.replicas.get_or_insert(replicas);
        check(replicas >= 1, "replicas must be at least 1")?;
        if matches!(kind, ExperimentKind::Fluctuations | ExperimentKind::CltVariances | ExperimentKind::BgResidual) {
            check(replicas >= MIN_REPLICAS, &format!("{} needs at least {MIN_REPLICAS} replicas", kind.name()))?;
        }
        if let Some(default) = integrator {
            let i = self.integrator.get_or_insert(default);
            i.seed = self.seed;
            i.validate().map_err(|e| usage(e.to_string()))?;
            if matches!(kind, ExperimentKind::Fluctuations | ExperimentKind::BgResidual) {
                check(i.accelerate, "this experiment runs the accelerated dynamics; set integrator.accelerate = true")?;
            }
        }
        Ok(self)
    }

    pub fn replicas(&self) -> usize {
        self.replicas.unwrap_or(1)
    }

    pub fn integrator(&self) -> IntegratorConfig {
        self.integrator.expect("resolved config has an integrator")
    }
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(usage(msg))
    }
}
