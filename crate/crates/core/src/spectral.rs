//! Relaxation and spectral-gap diagnostics: the Kac random-rotation walk,
//! pair-rotation Dirichlet forms, the path lemma and the diffusive scaling
//! of relaxation times for the nearest-neighbour dynamics.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::dynamics::{Integrator, IntegratorConfig, Probe};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Observable, Topology};
use crate::rng::{par_replicas, replica_rng, Rng};
use crate::sphere::{fill_sphere, SphereSpec};
use crate::stats::{autocorrelation, exponential_tail_time, fit_line, integrated_autocorrelation_time, Estimate};

/// A point on a sphere moved by random plane rotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KacState {
    pub x: Vec<f64>,
    pub steps: u64,
}

impl KacState {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::InvalidParameter("the walk needs at least two coordinates".into()));
        }
        Ok(KacState { x, steps: 0 })
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Clockwise rotation by `θ` in the `(i, j)` plane.
#[inline]
pub fn rotate_pair(x: &mut [f64], i: usize, j: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    let (a, b) = (x[i], x[j]);
    x[i] = c * a + s * b;
    x[j] = -s * a + c * b;
}

#[inline]
fn random_pair(n: usize, rng: &mut Rng) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i.min(j), i.max(j))
}

/// One event of the walk: a uniform pair `i < j` rotated by a uniform angle.
pub fn kac_step(state: &mut KacState, rng: &mut Rng) {
    let (i, j) = random_pair(state.x.len(), rng);
    let theta = rng.random_range(0.0..2.0 * PI);
    rotate_pair(&mut state.x, i, j, theta);
    state.steps += 1;
}

/// Monte Carlo estimate of the walk's Dirichlet form
/// `E[(f(R^θ_{ij} x) − f(x))²]` with `x` uniform on the sphere and the pair
/// and angle uniform.
pub fn kac_dirichlet(f: &dyn Observable, spec: SphereSpec, samples: usize, rng: &mut Rng) -> Estimate {
    let mut x = vec![0.0; spec.n];
    let mut vals = Vec::with_capacity(samples);
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        let before = f.value(&x);
        let (i, j) = random_pair(spec.n, rng);
        let theta = rng.random_range(0.0..2.0 * PI);
        rotate_pair(&mut x, i, j, theta);
        vals.push((f.value(&x) - before).powi(2));
    }
    Estimate::from_samples(&vals)
}

/// Angle nodes for the rotation average; the trapezoid rule on the circle
/// is exact for trigonometric polynomials of degree below this.
pub const ANGLE_NODES: usize = 64;

/// `B_{ij} f(x) = (1/2π)∫[f(R^θ_{ij} x) − f(x)]² dθ`.
pub fn rotation_energy(f: &dyn Observable, x: &[f64], i: usize, j: usize) -> f64 {
    let base = f.value(x);
    let mut y = x.to_vec();
    let mut total = 0.0;
    for m in 0..ANGLE_NODES {
        let theta = 2.0 * PI * m as f64 / ANGLE_NODES as f64;
        y[i] = x[i];
        y[j] = x[j];
        rotate_pair(&mut y, i, j, theta);
        total += (f.value(&y) - base).powi(2);
    }
    total / ANGLE_NODES as f64
}

/// Both sides of an inequality `lhs ≤ rhs` estimated on shared samples.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub check: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `rhs − lhs` with its paired standard error.
    pub margin: Estimate,
    pub violated: bool,
}

/// Violations are declared beyond this many standard errors.
pub const VIOLATION_SIGMAS: f64 = 4.0;

fn inequality(check: String, lhs: Vec<f64>, rhs: Vec<f64>) -> InequalityReport {
    let margin: Vec<f64> = rhs.iter().zip(&lhs).map(|(r, l)| r - l).collect();
    let margin = Estimate::from_samples(&margin);
    InequalityReport {
        check,
        lhs: Estimate::from_samples(&lhs),
        rhs: Estimate::from_samples(&rhs),
        violated: margin.value < -VIOLATION_SIGMAS * margin.stderr,
        margin,
    }
}

/// `∫B_{i,i+k} f ≤ 64k Σ_{j=0}^{k−1} ∫B_{i+j,i+j+1} f` on the sphere.
pub fn path_lemma_check(
    f: &dyn Observable,
    i: usize,
    k: usize,
    spec: SphereSpec,
    samples: usize,
    rng: &mut Rng,
) -> Result<InequalityReport> {
    if k < 2 || i + k >= spec.n {
        return Err(Error::InvalidParameter(format!(
            "path from {i} to {} needs k ≥ 2 and must stay inside {} coordinates",
            i + k,
            spec.n
        )));
    }
    let mut x = vec![0.0; spec.n];
    let (mut lhs, mut rhs) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        lhs.push(rotation_energy(f, &x, i, i + k));
        let chain: f64 = (0..k).map(|j| rotation_energy(f, &x, i + j, i + j + 1)).sum();
        rhs.push(64.0 * k as f64 * chain);
    }
    Ok(inequality(format!("path i={i} k={k}"), lhs, rhs))
}

/// `∫B_{ij} f ≤ 2π ∫|X_{ij} f|²` on the sphere.
pub fn poincare_check(
    f: &dyn Observable,
    i: usize,
    j: usize,
    spec: SphereSpec,
    samples: usize,
    rng: &mut Rng,
) -> Result<InequalityReport> {
    if i == j || i.max(j) >= spec.n {
        return Err(Error::InvalidParameter(format!("invalid pair ({i}, {j})")));
    }
    let mut x = vec![0.0; spec.n];
    let (mut lhs, mut rhs) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        lhs.push(rotation_energy(f, &x, i, j));
        let xf = x[j] * f.partial(&x, i) - x[i] * f.partial(&x, j);
        rhs.push(2.0 * PI * xf * xf);
    }
    Ok(inequality(format!("poincare ({i},{j})"), lhs, rhs))
}

/// `Σ_x cos(2π m x / N) p_x²`: mean zero on every sphere and, for constant
/// coupling, an eigenfunction of the nearest-neighbour generator.
pub fn fourier_energy_probe(n: usize, mode: u32) -> Probe {
    let w: Vec<f64> = (0..n).map(|x| (2.0 * PI * mode as f64 * x as f64 / n as f64).cos()).collect();
    Probe::new(format!("energy-mode-{mode}"), move |p: &[f64]| {
        p.iter().zip(&w).map(|(v, c)| c * v * v).sum()
    })
}

/// Sampling and windowing of a relaxation-time measurement.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationConfig {
    /// Integrator step (unaccelerated time).
    pub dt: f64,
    /// Time between recorded samples; rounded to whole sweeps.
    pub sample_interval: f64,
    pub samples: usize,
    pub replicas: usize,
    pub burn_in: f64,
    pub seed: u64,
    /// Sokal window constant.
    #[serde(default = "default_window")]
    pub window_c: f64,
}

fn default_window() -> f64 {
    6.0
}

/// Relaxation time of one probe. `tau` is the larger of the integrated and
/// the exponential-tail estimates.
#[derive(Clone, Debug, Serialize)]
pub struct RelaxationEstimate {
    pub n_sites: usize,
    pub probe: String,
    pub tau_int: f64,
    pub tau_exp: Option<f64>,
    pub tau: f64,
    pub stderr: f64,
    pub window: usize,
    pub interval: f64,
}

fn estimate_from_series(n_sites: usize, probe: &str, series: &[Vec<f64>], interval: f64, c: f64) -> Result<RelaxationEstimate> {
    let len: usize = series.iter().map(|s| s.len()).sum();
    let shortest = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut max_lag = 64.min(shortest.saturating_sub(1));
    let (rho, tau_samples, window) = loop {
        let rho = autocorrelation(series, max_lag);
        match integrated_autocorrelation_time(&rho, c) {
            Ok((t, w)) => break (rho, t, w),
            Err(_) if 2 * max_lag < shortest / 10 => max_lag *= 2,
            Err(_) => return Err(Error::Unresolved { window: max_lag, len: shortest }),
        }
    };
    if (window as f64) * 50.0 > shortest as f64 {
        return Err(Error::Unresolved { window, len: shortest });
    }
    let tau_int = tau_samples * interval;
    let tau_exp = exponential_tail_time(&rho[..=window], 0.05, 0.8).ok().map(|t| t * interval);
    // Madras–Sokal variance of the windowed estimator
    let rel = ((4.0 * window as f64 + 2.0) / len as f64).sqrt();
    let tau = tau_exp.map_or(tau_int, |e| e.max(tau_int));
    Ok(RelaxationEstimate {
        n_sites,
        probe: probe.to_string(),
        tau_int,
        tau_exp,
        tau,
        stderr: tau * rel,
        window,
        interval,
    })
}

/// Stationary runs of the unaccelerated nearest-neighbour dynamics started
/// uniformly on the sphere of radius `y√N`; one estimate per probe.
pub fn relaxation_time(
    params: &ModelParams,
    coupling: &dyn Coupling,
    probes: &[Probe],
    config: &RelaxationConfig,
) -> Result<Vec<RelaxationEstimate>> {
    params.validate()?;
    if config.replicas == 0 || config.samples < 2 {
        return Err(Error::InvalidParameter("need at least one replica and two samples".into()));
    }
    let n = params.n_sites;
    let spec = SphereSpec::for_model(n, params.y)?;
    let sweeps = ((config.sample_interval / config.dt).round() as usize).max(1);
    let interval = sweeps as f64 * config.dt;
    let burn = (config.burn_in / config.dt).round() as usize;
    let integ = IntegratorConfig::new(config.dt, false, config.seed);
    let runs = par_replicas(config.replicas, |r| {
        let mut rng = replica_rng(config.seed, r);
        let mut p = vec![0.0; n];
        fill_sphere(&mut p, spec, &mut rng);
        let mut it = Integrator::new(params, &integ, coupling, rng)?;
        for _ in 0..burn {
            it.sweep(&mut p)?;
        }
        let mut out = vec![Vec::with_capacity(config.samples); probes.len()];
        for _ in 0..config.samples {
            for (o, pr) in out.iter_mut().zip(probes) {
                o.push((pr.f)(&p));
            }
            for _ in 0..sweeps {
                it.sweep(&mut p)?;
            }
        }
        Ok(out)
    })?;
    probes
        .iter()
        .enumerate()
        .map(|(k, pr)| {
            let series: Vec<Vec<f64>> = runs.iter().map(|r| r[k].clone()).collect();
            estimate_from_series(n, &pr.name, &series, interval, config.window_c)
        })
        .collect()
}

/// Relaxation time of a probe under the Kac walk, in rotation events.
pub fn kac_relaxation_time(
    n: usize,
    radius: f64,
    probe: &Probe,
    events_per_sample: usize,
    samples: usize,
    replicas: usize,
    seed: u64,
) -> Result<RelaxationEstimate> {
    let spec = SphereSpec::new(n, radius)?;
    let series = par_replicas(replicas, |r| {
        let mut rng = replica_rng(seed, r);
        let mut state = KacState::new(vec![0.0; n])?;
        fill_sphere(&mut state.x, spec, &mut rng);
        let mut out = Vec::with_capacity(samples);
        for _ in 0..samples {
            out.push((probe.f)(&state.x));
            for _ in 0..events_per_sample {
                kac_step(&mut state, &mut rng);
            }
        }
        Ok(out)
    })?;
    let mut est = estimate_from_series(n, &probe.name, &series, events_per_sample as f64, default_window())?;
    est.probe = format!("kac:{}", est.probe);
    Ok(est)
}

/// Power-law fit `τ ∝ N^α` with a normal 95% interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn scaling_fit(points: &[RelaxationEstimate]) -> Result<ScalingFit> {
    let x: Vec<f64> = points.iter().map(|p| (p.n_sites as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.tau.ln()).collect();
    let w: Vec<f64> = points.iter().map(|p| (p.tau / p.stderr).powi(2)).collect();
    let fit = fit_line(&x, &y, Some(&w))?;
    Ok(ScalingFit {
        alpha: fit.slope,
        stderr: fit.slope_stderr,
        ci_low: fit.slope - 1.96 * fit.slope_stderr,
        ci_high: fit.slope + 1.96 * fit.slope_stderr,
    })
}

/// Exact relaxation time of [`fourier_energy_probe`] for constant coupling
/// `a0` on the periodic chain.
pub fn diffusive_relaxation_time(n: usize, mode: u32, a0: f64) -> f64 {
    1.0 / (2.0 * a0 * (1.0 - (2.0 * PI * mode as f64 / n as f64).cos()))
}

/// Convenience: relaxation time of `probes` for each chain length.
pub fn relaxation_scan(
    sizes: &[usize],
    y: f64,
    coupling: &crate::coupling::CouplingSpec,
    topology: Topology,
    probe: impl Fn(usize) -> Probe,
    config: impl Fn(usize) -> RelaxationConfig,
) -> Result<Vec<RelaxationEstimate>> {
    sizes
        .iter()
        .map(|&n| {
            let params = ModelParams::new(n, y, *coupling, topology)?;
            let mut v = relaxation_time(&params, coupling, &[probe(n)], &config(n))?;
            Ok(v.remove(0))
        })
        .collect()
}
