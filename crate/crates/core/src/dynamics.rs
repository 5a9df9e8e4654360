//! Energy-conserving integration of the exchange dynamics.
//!
//! Each bond update rotates the pair `(p_x, p_{x+1})` on its own circle. In
//! the angle `θ` of that pair the bond generator is `½∂_θ(ã ∂_θ)` with
//! `ã(θ) = a(ρ cos θ, ρ sin θ)`, so the Itô step is
//! `θ' = θ + ½ã'(θ) h + √(ã(θ) h) ξ` and the pair energy is untouched.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::model::{total_energy, ModelParams, Topology, VelocityField};
use crate::rng::{replica_rng, Rng as ReplicaRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Even bonds in order, then odd bonds.
    EvenOdd,
    /// `n_bonds` uniformly chosen bonds per sweep.
    RandomSequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Time advanced per sweep, in the units of the generated process.
    pub dt_macro: f64,
    #[serde(default = "default_sweep")]
    pub sweep: Sweep,
    /// Run the process generated by `N² L` rather than `L`.
    #[serde(default)]
    pub accelerate: bool,
    #[serde(default)]
    pub seed: u64,
    /// Largest allowed drift increment of the angle per bond step.
    #[serde(default = "default_ratio")]
    pub stability_ratio: f64,
}

fn default_sweep() -> Sweep {
    Sweep::EvenOdd
}

fn default_ratio() -> f64 {
    0.1
}

impl IntegratorConfig {
    pub fn new(dt_macro: f64, accelerate: bool, seed: u64) -> Self {
        IntegratorConfig {
            dt_macro,
            sweep: Sweep::EvenOdd,
            accelerate,
            seed,
            stability_ratio: 0.1,
        }
    }

    pub fn with_sweep(mut self, sweep: Sweep) -> Self {
        self.sweep = sweep;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_macro > 0.0 && self.dt_macro.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt_macro must be positive, got {}",
                self.dt_macro
            )));
        }
        if !(self.stability_ratio > 0.0 && self.stability_ratio <= 0.1) {
            return Err(Error::InvalidParameter(format!(
                "stability_ratio must lie in (0, 0.1], got {}",
                self.stability_ratio
            )));
        }
        Ok(())
    }

    /// Per-bond time step: `N² dt_macro` when accelerated.
    pub fn dt_micro(&self, n_sites: usize) -> f64 {
        if self.accelerate {
            self.dt_macro * (n_sites * n_sites) as f64
        } else {
            self.dt_macro
        }
    }
}

/// Advances bond `(i, j)` by time `h`. Returns the angle increment's drift
/// part so callers can monitor stability.
#[inline]
pub fn rotate_bond<C: Coupling + ?Sized, R: Rng + ?Sized>(
    p: &mut [f64],
    i: usize,
    j: usize,
    h: f64,
    coupling: &C,
    rng: &mut R,
) -> f64 {
    let (r, s) = (p[i], p[j]);
    if r == 0.0 && s == 0.0 {
        return 0.0;
    }
    let a = coupling.value(r, s);
    // ã'(θ) = −s ∂_r a + r ∂_s a = −(X a)
    let drift = -0.5 * coupling.rotation_derivative(r, s) * h;
    let xi: f64 = rng.sample(StandardNormal);
    let (sn, cs) = (drift + (a * h).sqrt() * xi).sin_cos();
    p[i] = r * cs - s * sn;
    p[j] = r * sn + s * cs;
    drift
}

/// Single-bond update with the stability guard.
pub fn bond_update<C: Coupling + ?Sized, R: Rng + ?Sized>(
    p: &mut VelocityField,
    x: usize,
    h: f64,
    coupling: &C,
    stability_ratio: f64,
    rng: &mut R,
) -> Result<()> {
    let n = p.len();
    let n_bonds = match p.topology {
        Topology::Periodic => n,
        Topology::Open => n.saturating_sub(1),
    };
    if x >= n_bonds {
        return Err(Error::InvalidBond {
            bond: x,
            n_sites: n,
            topology: p.topology.name(),
        });
    }
    let j = (x + 1) % n;
    let drift = rotate_bond(&mut p.p, x, j, h, coupling, rng);
    if drift.abs() > stability_ratio {
        return Err(Error::Stability {
            bond: x,
            step: drift.abs(),
            ratio: stability_ratio,
            norm: p.norm(),
        });
    }
    Ok(())
}

/// Sweeping integrator bound to one coupling and one random stream.
pub struct Integrator<'a, C: Coupling + ?Sized> {
    coupling: &'a C,
    n_sites: usize,
    n_bonds: usize,
    h: f64,
    sweep: Sweep,
    ratio: f64,
    rng: ReplicaRng,
}

impl<'a, C: Coupling + ?Sized> Integrator<'a, C> {
    pub fn new(params: &ModelParams, config: &IntegratorConfig, coupling: &'a C, rng: ReplicaRng) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        Ok(Integrator {
            coupling,
            n_sites: params.n_sites,
            n_bonds: params.n_bonds(),
            h: config.dt_micro(params.n_sites),
            sweep: config.sweep,
            ratio: config.stability_ratio,
            rng,
        })
    }

    pub fn rng(&mut self) -> &mut ReplicaRng {
        &mut self.rng
    }

    #[inline]
    fn update(&mut self, p: &mut [f64], x: usize) -> Result<()> {
        let j = if x + 1 == self.n_sites { 0 } else { x + 1 };
        let drift = rotate_bond(p, x, j, self.h, self.coupling, &mut self.rng);
        if drift.abs() > self.ratio {
            return Err(Error::Stability {
                bond: x,
                step: drift.abs(),
                ratio: self.ratio,
                norm: p.iter().map(|v| v * v).sum::<f64>().sqrt(),
            });
        }
        Ok(())
    }

    /// One sweep: every bond receives time `h` (on average, for random
    /// sequential order).
    pub fn sweep(&mut self, p: &mut [f64]) -> Result<()> {
        match self.sweep {
            Sweep::EvenOdd => {
                for x in (0..self.n_bonds).step_by(2) {
                    self.update(p, x)?;
                }
                for x in (1..self.n_bonds).step_by(2) {
                    self.update(p, x)?;
                }
            }
            Sweep::RandomSequential => {
                for _ in 0..self.n_bonds {
                    let x = self.rng.random_range(0..self.n_bonds);
                    self.update(p, x)?;
                }
            }
        }
        Ok(())
    }
}

/// Callback invoked at sampling times.
pub trait Observer {
    fn observe(&mut self, t: f64, p: &[f64]) -> Result<()>;
}

impl<F: FnMut(f64, &[f64])> Observer for F {
    fn observe(&mut self, t: f64, p: &[f64]) -> Result<()> {
        self(t, p);
        Ok(())
    }
}

/// Summary of an integration run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub seed: u64,
    pub replica: u64,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// Largest relative energy deviation seen at sampling times.
    pub max_energy_drift: f64,
    pub final_state: VelocityField,
}

/// Advances `p0` to time `t_final`, calling observers at `t = 0` and every
/// `sample_interval`. The random stream is `(config.seed, replica)`.
#[allow(clippy::too_many_arguments)]
pub fn evolve(
    p0: &VelocityField,
    t_final: f64,
    params: &ModelParams,
    config: &IntegratorConfig,
    replica: u64,
    sample_interval: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    evolve_with(p0, t_final, params, config, &params.coupling, replica, sample_interval, observers)
}

/// [`evolve`] with an arbitrary coupling in place of `params.coupling`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_with<C: Coupling + ?Sized>(
    p0: &VelocityField,
    t_final: f64,
    params: &ModelParams,
    config: &IntegratorConfig,
    coupling: &C,
    replica: u64,
    sample_interval: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    if p0.len() != params.n_sites {
        return Err(Error::InvalidParameter(format!(
            "state has {} sites, model has {}",
            p0.len(),
            params.n_sites
        )));
    }
    if !(t_final >= 0.0) {
        return Err(Error::InvalidParameter(format!("T must be nonnegative, got {t_final}")));
    }
    let mut integ = Integrator::new(params, config, coupling, replica_rng(config.seed, replica))?;
    let steps = (t_final / config.dt_macro).round() as u64;
    let stride = ((sample_interval / config.dt_macro).round() as u64).max(1);
    let mut p = p0.p.clone();
    let e0 = total_energy(&p);
    let mut times = Vec::new();
    let mut max_drift: f64 = 0.0;
    let mut emit = |t: f64, p: &[f64], times: &mut Vec<f64>, observers: &mut [&mut dyn Observer]| -> Result<()> {
        times.push(t);
        let e = total_energy(p);
        if e0 > 0.0 {
            max_drift = max_drift.max(((e - e0) / e0).abs());
        }
        for o in observers.iter_mut() {
            o.observe(t, p)?;
        }
        Ok(())
    };
    emit(0.0, &p, &mut times, observers)?;
    for step in 1..=steps {
        integ.sweep(&mut p)?;
        if step % stride == 0 || step == steps {
            emit(step as f64 * config.dt_macro, &p, &mut times, observers)?;
        }
    }
    let e1 = total_energy(&p);
    if e0 > 0.0 {
        max_drift = max_drift.max(((e1 - e0) / e0).abs());
    }
    Ok(Trajectory {
        times,
        seed: config.seed,
        replica,
        initial_energy: e0,
        final_energy: e1,
        max_energy_drift: max_drift,
        final_state: VelocityField::new(p, params.topology),
    })
}

/// A named scalar function of the configuration.
pub struct Probe {
    pub name: String,
    pub f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Probe {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Probe {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// Streams one CSV row `time,probe_1,...` per sampling time.
pub struct CsvRecorder<W: Write> {
    out: W,
    probes: Vec<Probe>,
}

impl<W: Write> CsvRecorder<W> {
    pub fn new(mut out: W, probes: Vec<Probe>) -> Result<Self> {
        let mut header = String::from("time");
        for p in &probes {
            header.push(',');
            header.push_str(&p.name);
        }
        writeln!(out, "{header}").map_err(io_err)?;
        Ok(CsvRecorder { out, probes })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidParameter(format!("write failed: {e}"))
}

impl<W: Write> Observer for CsvRecorder<W> {
    fn observe(&mut self, t: f64, p: &[f64]) -> Result<()> {
        let mut line = format_float(t);
        for probe in &self.probes {
            line.push(',');
            line.push_str(&format_float((probe.f)(p)));
        }
        writeln!(self.out, "{line}").map_err(io_err)
    }
}

/// Scientific notation with 17 significant digits, which parses back to
/// the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::model::sample_equilibrium;
    use crate::polynomial::Polynomial;
    use crate::stats::Accumulator;

    #[test]
    fn zero_pair_is_fixed() {
        let mut p = VelocityField::new(vec![0.0, 0.0, 1.0], Topology::Open);
        let mut rng = replica_rng(1, 0);
        bond_update(&mut p, 0, 0.1, &CouplingSpec::default(), 0.1, &mut rng).unwrap();
        assert_eq!(p.p, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_coupling_is_brownian_on_circle() {
        // with a ≡ 1 the angle increment is √h ξ with the same ξ the rng yields
        let h = 0.04;
        let mut p = VelocityField::new(vec![1.0, 0.5, 2.0], Topology::Open);
        let theta = 0.5f64.atan2(1.0);
        let mut rng = replica_rng(9, 0);
        let mut twin = replica_rng(9, 0);
        bond_update(&mut p, 0, h, &CouplingSpec::default(), 0.1, &mut rng).unwrap();
        let xi: f64 = twin.sample(StandardNormal);
        let rho = 1.25f64.sqrt();
        let t = theta + h.sqrt() * xi;
        assert!((p.p[0] - rho * t.cos()).abs() < 1e-14);
        assert!((p.p[1] - rho * t.sin()).abs() < 1e-14);
        assert_eq!(p.p[2], 2.0);
    }

    #[test]
    fn invalid_bond_rejected() {
        let mut p = VelocityField::new(vec![1.0, 0.5, 2.0], Topology::Open);
        let mut rng = replica_rng(1, 0);
        assert!(bond_update(&mut p, 2, 0.1, &CouplingSpec::default(), 0.1, &mut rng).is_err());
    }

    #[test]
    fn t_zero_returns_initial_state() {
        let params = ModelParams::periodic(8, 1.0, CouplingSpec::default()).unwrap();
        let mut rng = replica_rng(1, 0);
        let p0 = sample_equilibrium(&params, &mut rng);
        let cfg = IntegratorConfig::new(1e-3, false, 4);
        let tr = evolve(&p0, 0.0, &params, &cfg, 0, 1.0, &mut []).unwrap();
        assert_eq!(tr.final_state, p0);
        assert_eq!(tr.times, vec![0.0]);
    }

    #[test]
    fn weak_order_matches_generator() {
        // E[f(p')] − f(p) = h (L_bond f)(p) + O(h²); Richardson in h removes
        // the O(h²) term.
        let a = CouplingSpec::gaussian_bump(0.5, 1.0);
        let p0 = VelocityField::new(vec![0.9, -0.4, 0.3], Topology::Open);
        let f = Polynomial::monomial(&[(0, 2)], 1.0);
        // L restricted to bond 0
        let lf = crate::model::bond_generator(&f, &p0.p, 0, 1, &a).unwrap();
        let mean_increment = |h: f64, seed: u64| {
            let mut rng = replica_rng(seed, 0);
            let mut acc = Accumulator::default();
            for _ in 0..400_000 {
                let mut p = p0.p.clone();
                rotate_bond(&mut p, 0, 1, h, &a, &mut rng);
                acc.push((p[0] * p[0] - p0.p[0] * p0.p[0]) / h);
            }
            acc.estimate()
        };
        let e1 = mean_increment(0.02, 1);
        let e2 = mean_increment(0.01, 2);
        let rich = 2.0 * e2.value - e1.value;
        let se = (4.0 * e2.stderr.powi(2) + e1.stderr.powi(2)).sqrt();
        assert!((rich - lf).abs() < 4.0 * se, "{rich} ± {se} vs {lf}");
    }
}
