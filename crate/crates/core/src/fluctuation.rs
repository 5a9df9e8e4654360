//! The energy fluctuation field, its Ornstein–Uhlenbeck covariance
//! prediction, CLT time-variances on the open chain and the
//! Boltzmann–Gibbs residual on the torus.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::coupling::Coupling;
use crate::dynamics::{Integrator, IntegratorConfig};
use crate::error::{Error, Result};
use crate::model::{fill_equilibrium, ModelParams, Topology, VelocityField};
use crate::polynomial::Polynomial;
use crate::rng::{par_replicas, replica_rng};
use crate::sphere::{fill_sphere, SphereSpec};
use crate::stats::{fit_line, Estimate, LineFit, StatSeries};
use crate::variational::LocalFunction;

/// A smooth periodic function on the torus `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunction {
    /// `√2 cos(2π n u + φ)`, normalised so that `⟨H, H⟩ = 1`.
    Fourier { mode: u32, phase: f64 },
    Constant { value: f64 },
    /// Periodic cubic Hermite interpolation of values and derivatives on
    /// the grid `j / M`.
    Tabulated { values: Vec<f64>, derivatives: Vec<f64> },
}

impl TestFunction {
    pub fn fourier(mode: u32, phase: f64) -> Self {
        TestFunction::Fourier { mode, phase }
    }

    pub fn cosine(mode: u32) -> Self {
        Self::fourier(mode, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TestFunction::Fourier { mode: 0, .. } => {
                Err(Error::InvalidParameter("Fourier mode must be ≥ 1; use a constant".into()))
            }
            TestFunction::Fourier { phase, .. } if !phase.is_finite() => {
                Err(Error::InvalidParameter("phase must be finite".into()))
            }
            TestFunction::Tabulated { values, derivatives } => {
                if values.len() < 2 || values.len() != derivatives.len() {
                    return Err(Error::InvalidParameter(
                        "tabulated test function needs ≥ 2 values and as many derivatives".into(),
                    ));
                }
                if values.iter().chain(derivatives).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("tabulated values must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Locates `u` in the table: cell index, local coordinate in `[0,1)`,
    /// and grid spacing.
    fn cell(m: usize, u: f64) -> (usize, usize, f64, f64) {
        let x = u.rem_euclid(1.0) * m as f64;
        let j = (x.floor() as usize).min(m - 1);
        (j, (j + 1) % m, x - j as f64, 1.0 / m as f64)
    }

    pub fn value(&self, u: f64) -> f64 {
        match self {
            TestFunction::Fourier { mode, phase } => SQRT_2 * (2.0 * PI * *mode as f64 * u + phase).cos(),
            TestFunction::Constant { value } => *value,
            TestFunction::Tabulated { values, derivatives } => {
                let (j, k, t, dx) = Self::cell(values.len(), u);
                let (t2, t3) = (t * t, t * t * t);
                (2.0 * t3 - 3.0 * t2 + 1.0) * values[j]
                    + (t3 - 2.0 * t2 + t) * dx * derivatives[j]
                    + (-2.0 * t3 + 3.0 * t2) * values[k]
                    + (t3 - t2) * dx * derivatives[k]
            }
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            TestFunction::Fourier { mode, phase } => {
                let w = 2.0 * PI * *mode as f64;
                -SQRT_2 * w * (w * u + phase).sin()
            }
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Tabulated { values, derivatives } => {
                let (j, k, t, dx) = Self::cell(values.len(), u);
                let t2 = t * t;
                ((6.0 * t2 - 6.0 * t) * values[j] + (-6.0 * t2 + 6.0 * t) * values[k]) / dx
                    + (3.0 * t2 - 4.0 * t + 1.0) * derivatives[j]
                    + (3.0 * t2 - 2.0 * t) * derivatives[k]
            }
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match self {
            TestFunction::Fourier { mode, phase } => {
                let w = 2.0 * PI * *mode as f64;
                -SQRT_2 * w * w * (w * u + phase).cos()
            }
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Tabulated { values, derivatives } => {
                let (j, k, t, dx) = Self::cell(values.len(), u);
                ((12.0 * t - 6.0) * (values[j] - values[k]) / dx
                    + (6.0 * t - 4.0) * derivatives[j]
                    + (6.0 * t - 2.0) * derivatives[k])
                    / dx
            }
        }
    }

    /// `(n, φ)` for the Fourier kind.
    pub fn fourier_mode(&self) -> Option<(u32, f64)> {
        match self {
            TestFunction::Fourier { mode, phase } => Some((*mode, *phase)),
            _ => None,
        }
    }

    /// `H(x/N)` for the torus points `x = 1..=N`, stored at array index `x − 1`.
    pub fn grid_values(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|x| self.value(x as f64 / n as f64)).collect()
    }

    /// `∇_N H(x/N) = N[H((x+1)/N) − H(x/N)]`, aligned with the bond from
    /// array index `x − 1` to `x`.
    pub fn discrete_gradient(&self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (1..=n)
            .map(|x| nf * (self.value((x + 1) as f64 / nf) - self.value(x as f64 / nf)))
            .collect()
    }
}

/// `Y^N(H) = N^{−1/2} Σ_x H(x/N)(p_x² − y²)`.
pub fn field_eval(p: &VelocityField, h: &TestFunction, y: f64) -> Result<f64> {
    if p.topology != Topology::Periodic {
        return Err(Error::NotPeriodic);
    }
    Ok(field_value(&p.p, &h.grid_values(p.len()), y))
}

/// [`field_eval`] with precomputed `H(x/N)`.
#[inline]
pub fn field_value(p: &[f64], grid: &[f64], y: f64) -> f64 {
    let y2 = y * y;
    let s: f64 = p.iter().zip(grid).map(|(v, h)| h * (v * v - y2)).sum();
    s / (p.len() as f64).sqrt()
}

const HEAT_GRID: usize = 512;

/// `2y⁴⟨S_t H₁, H₂⟩` with `S_t` the heat semigroup of `â Δ` on the torus.
pub fn ou_covariance_predict(h1: &TestFunction, h2: &TestFunction, lag: f64, y: f64, a_hat: f64) -> Result<f64> {
    if !(lag >= 0.0) {
        return Err(Error::InvalidParameter(format!("lag must be ≥ 0, got {lag}")));
    }
    if !(a_hat > 0.0) {
        return Err(Error::InvalidParameter(format!("diffusion coefficient must be > 0, got {a_hat}")));
    }
    let y4 = y.powi(4);
    if let (Some((n1, p1)), Some((n2, p2))) = (h1.fourier_mode(), h2.fourier_mode()) {
        if n1 != n2 {
            return Ok(0.0);
        }
        let w = 2.0 * PI * n1 as f64;
        return Ok(2.0 * y4 * (-a_hat * w * w * lag).exp() * (p1 - p2).cos());
    }
    // Fourier coefficients on a fine grid; the heat kernel damps mode k by
    // exp(−â(2πk)²t)
    let m = HEAT_GRID;
    let u: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
    let f1: Vec<f64> = u.iter().map(|&v| h1.value(v)).collect();
    let f2: Vec<f64> = u.iter().map(|&v| h2.value(v)).collect();
    let mut total = 0.0;
    for k in 0..=m / 2 {
        let (mut c1, mut s1, mut c2, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..m {
            let (s, c) = (2.0 * PI * (k * j % m) as f64 / m as f64).sin_cos();
            c1 += f1[j] * c;
            s1 += f1[j] * s;
            c2 += f2[j] * c;
            s2 += f2[j] * s;
        }
        let norm = m as f64 * m as f64;
        let mult = if k == 0 || 2 * k == m { 1.0 } else { 2.0 };
        let w = 2.0 * PI * k as f64;
        total += mult * (-a_hat * w * w * lag).exp() * (c1 * c2 + s1 * s2) / norm;
    }
    Ok(2.0 * y4 * total)
}

/// Minimum replica count for replica-based error bars.
pub const MIN_REPLICAS: usize = 8;

fn require_replicas(got: usize) -> Result<()> {
    if got < MIN_REPLICAS {
        return Err(Error::TooFewReplicas {
            needed: MIN_REPLICAS,
            got,
        });
    }
    Ok(())
}

/// `E[Y_t(H₁) Y_{t+lag}(H₂)]` from per-replica field series sampled every
/// `dt`. Each replica contributes its time average; error bars come from
/// the spread across replicas.
pub fn empirical_time_covariance(
    first: &[Vec<f64>],
    second: &[Vec<f64>],
    dt: f64,
    lags: &[usize],
    seeds: Vec<u64>,
) -> Result<StatSeries> {
    require_replicas(first.len())?;
    if first.len() != second.len() {
        return Err(Error::InvalidParameter("series counts differ".into()));
    }
    let mut rows = Vec::with_capacity(first.len());
    for (a, b) in first.iter().zip(second) {
        let len = a.len().min(b.len());
        let mut row = Vec::with_capacity(lags.len());
        for &lag in lags {
            if lag >= len {
                return Err(Error::InvalidParameter(format!("lag {lag} exceeds series length {len}")));
            }
            let m = len - lag;
            row.push((0..m).map(|t| a[t] * b[t + lag]).sum::<f64>() / m as f64);
        }
        rows.push(row);
    }
    let grid = lags.iter().map(|&l| l as f64 * dt).collect();
    Ok(StatSeries::from_replicas(grid, &rows, seeds))
}

/// Equilibrium runs of the accelerated periodic dynamics recording the
/// field for each test function. Returns `[replica][test][sample]`.
pub fn simulate_fields(
    params: &ModelParams,
    config: &IntegratorConfig,
    tests: &[TestFunction],
    samples: usize,
    sample_every: usize,
    replicas: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if params.topology != Topology::Periodic {
        return Err(Error::NotPeriodic);
    }
    for h in tests {
        h.validate()?;
    }
    let n = params.n_sites;
    let grids: Vec<Vec<f64>> = tests.iter().map(|h| h.grid_values(n)).collect();
    par_replicas(replicas, |r| {
        let mut rng = replica_rng(config.seed, r);
        let mut p = vec![0.0; n];
        fill_equilibrium(&mut p, params.y, &mut rng);
        let mut integ = Integrator::new(params, config, &params.coupling, rng)?;
        let mut out = vec![Vec::with_capacity(samples); tests.len()];
        for _ in 0..samples {
            for (o, g) in out.iter_mut().zip(&grids) {
                o.push(field_value(&p, g, params.y));
            }
            for _ in 0..sample_every {
                integ.sweep(&mut p)?;
            }
        }
        Ok(out)
    })
}

/// Exponential fit `C(lag) ≈ amplitude · exp(−rate · lag)`.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_stderr: f64,
    pub amplitude: f64,
    pub amplitude_stderr: f64,
    pub points: usize,
}

/// Weighted log-linear regression over the lags whose covariance exceeds
/// `floor` times the lag-0 value and is resolved at 3σ.
pub fn fit_decay(series: &StatSeries, floor: f64) -> Result<DecayFit> {
    let c0 = series.estimates.first().copied().unwrap_or(0.0);
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..series.len() {
        let e = series.get(i);
        if e.value > floor * c0 && e.value > 3.0 * e.stderr {
            let rel = e.stderr / e.value;
            x.push(series.grid[i]);
            y.push(e.value.ln());
            w.push(1.0 / (rel * rel).max(1e-300));
        }
    }
    if x.len() < 3 {
        return Err(Error::InvalidParameter("fewer than 3 resolved lags for the decay fit".into()));
    }
    let LineFit {
        slope,
        intercept,
        slope_stderr,
        intercept_stderr,
        ..
    } = fit_line(&x, &y, Some(&w))?;
    Ok(DecayFit {
        rate: -slope,
        rate_stderr: slope_stderr,
        amplitude: intercept.exp(),
        amplitude_stderr: intercept.exp() * intercept_stderr,
        points: x.len(),
    })
}

/// `Σ_x w_x L(τ^x F)` evaluated at a configuration, with the gradient and
/// the nearest-neighbour Hessian of `Σ_x w_x τ^x F` assembled from
/// precompiled partials of `F`.
///
/// The partials share monomials, so each distinct monomial is evaluated
/// once per translate from a table of powers of the whole chain.
#[derive(Clone, Debug)]
pub struct TranslateGenerator {
    n: usize,
    width: usize,
    periodic: bool,
    placements: Vec<(usize, f64)>,
    /// Dense exponent vectors over the local window.
    monomials: Vec<Vec<u32>>,
    /// Per monomial, `(slot, coefficient)` with slot `3l` the gradient,
    /// `3l+1` the diagonal and `3l+2` the off-diagonal Hessian at offset `l`.
    entries: Vec<Vec<(usize, f64)>>,
    max_exp: usize,
    powers: Vec<f64>,
    slots: Vec<f64>,
    g: Vec<f64>,
    hd: Vec<f64>,
    ho: Vec<f64>,
}

impl TranslateGenerator {
    /// Translates centred at every site of the torus, weighted by `weights`.
    pub fn periodic(f: &LocalFunction, weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        let k = f.half_width() as usize;
        if n < 2 * k + 2 {
            return Err(Error::InvalidParameter(format!(
                "torus of {n} sites is too small for a function of half-width {k}"
            )));
        }
        let placements = weights
            .iter()
            .enumerate()
            .map(|(x, &w)| ((x + n - k) % n, w))
            .collect();
        Ok(Self::build(f, n, true, placements))
    }

    /// Unit-weight translates fully inside an open chain of `n` sites.
    pub fn open(f: &LocalFunction, n: usize) -> Self {
        let width = 2 * f.half_width() as usize + 1;
        let placements = if n >= width { (0..=n - width).map(|c| (c, 1.0)).collect() } else { Vec::new() };
        Self::build(f, n, false, placements)
    }

    fn build(f: &LocalFunction, n: usize, periodic: bool, placements: Vec<(usize, f64)>) -> Self {
        let k = f.half_width() as i32;
        let width = 2 * k as usize + 1;
        let local = f.poly().shift(k);
        let mut index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        let mut monomials = Vec::new();
        let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut add = |poly: &Polynomial, slot: usize| {
            for (m, c) in poly.terms() {
                let exps: Vec<u32> = (0..width as i32).map(|l| m.exponent(l)).collect();
                let id = *index.entry(exps.clone()).or_insert_with(|| {
                    monomials.push(exps);
                    entries.push(Vec::new());
                    monomials.len() - 1
                });
                entries[id].push((slot, c));
            }
        };
        for l in 0..width {
            let d = local.partial(l as i32);
            add(&d.partial(l as i32), 3 * l + 1);
            if l + 1 < width {
                add(&d.partial(l as i32 + 1), 3 * l + 2);
            }
            add(&d, 3 * l);
        }
        let max_exp = monomials.iter().flatten().copied().max().unwrap_or(0) as usize;
        TranslateGenerator {
            n,
            width,
            periodic,
            placements,
            monomials,
            entries,
            max_exp,
            powers: vec![1.0; n * (max_exp + 1)],
            slots: vec![0.0; 3 * width],
            g: vec![0.0; n],
            hd: vec![0.0; n],
            ho: vec![0.0; n],
        }
    }

    pub fn eval(&mut self, p: &[f64], coupling: &dyn Coupling) -> f64 {
        let n = self.n;
        let stride = self.max_exp + 1;
        for (i, &v) in p.iter().enumerate() {
            let row = &mut self.powers[i * stride..(i + 1) * stride];
            for e in 1..stride {
                row[e] = row[e - 1] * v;
            }
        }
        self.g.iter_mut().for_each(|v| *v = 0.0);
        self.hd.iter_mut().for_each(|v| *v = 0.0);
        self.ho.iter_mut().for_each(|v| *v = 0.0);
        for &(c, w) in &self.placements {
            if w == 0.0 {
                continue;
            }
            self.slots.iter_mut().for_each(|v| *v = 0.0);
            for (exps, entries) in self.monomials.iter().zip(&self.entries) {
                let mut m = 1.0;
                for (l, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        m *= self.powers[((c + l) % n) * stride + e as usize];
                    }
                }
                for &(slot, coeff) in entries {
                    self.slots[slot] += coeff * m;
                }
            }
            for l in 0..self.width {
                let i = (c + l) % n;
                self.g[i] += w * self.slots[3 * l];
                self.hd[i] += w * self.slots[3 * l + 1];
                self.ho[i] += w * self.slots[3 * l + 2];
            }
        }
        let bonds = if self.periodic { n } else { n - 1 };
        let mut total = 0.0;
        for i in 0..bonds {
            let j = if i + 1 == n { 0 } else { i + 1 };
            let (r, s) = (p[i], p[j]);
            let x2 = s * s * self.hd[i] - 2.0 * r * s * self.ho[i] + r * r * self.hd[j] - r * self.g[i] - s * self.g[j];
            let mut v = coupling.value(r, s) * x2;
            let xa = coupling.rotation_derivative(r, s);
            if xa != 0.0 {
                v += xa * (s * self.g[i] - r * self.g[j]);
            }
            total += 0.5 * v;
        }
        total
    }
}

/// Observables of the open-chain CLT variances.
#[derive(Clone, Debug, PartialEq)]
pub enum CltObservable {
    /// `A_N = p_N² − p_{−N}²`.
    A,
    /// `B_N = Σ W_{x,x+1}`.
    B,
    /// `H_N^F = Σ L(τ^x F)`.
    H(LocalFunction),
    /// `B_N + â A_N − H_N^F`.
    Combo { a_hat: f64, f: LocalFunction },
}

/// Settings of [`clt_time_variance`].
#[derive(Clone, Debug)]
pub struct CltConfig {
    pub half_n: usize,
    pub y: f64,
    /// Micro time step; the dynamics is not accelerated here.
    pub dt: f64,
    /// Window length `t`.
    pub window: f64,
    pub windows_per_replica: usize,
    pub replicas: usize,
    /// Time discarded before the first window.
    pub burn_in: f64,
    pub seed: u64,
}

/// `(1/2N)(1/t)E[(∫₀ᵗ V)²]` at `t` and `t/2`, and the Richardson
/// combination `2S(t) − S(t/2)` that removes the `1/t` transient.
#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub window: f64,
    pub at_window: Estimate,
    pub at_half_window: Estimate,
    pub extrapolated: Estimate,
    pub windows: usize,
}

impl CltReport {
    /// Relative shift produced by the extrapolation; large values mean the
    /// window is too short.
    pub fn extrapolation_shift(&self) -> f64 {
        (self.extrapolated.value - self.at_window.value).abs() / self.extrapolated.value.abs().max(1e-300)
    }
}

/// Time variance of `V` on the open chain of `2N+1` sites started uniformly
/// on the sphere of radius `y√(2N+1)`. Windows are consecutive stretches
/// of each replica; error bars are across replicas.
pub fn clt_time_variance(v: &CltObservable, coupling: &dyn Coupling, config: &CltConfig) -> Result<CltReport> {
    require_replicas(config.replicas)?;
    if !(config.window > 0.0 && config.dt > 0.0) {
        return Err(Error::InvalidParameter("window and step must be positive".into()));
    }
    let n_sites = 2 * config.half_n + 1;
    let params = ModelParams::open(n_sites, config.y, crate::coupling::CouplingSpec::default())?;
    let spec = SphereSpec::for_model(n_sites, config.y)?;
    let half_steps = ((0.5 * config.window / config.dt).round() as usize).max(1);
    let window = 2.0 * half_steps as f64 * config.dt;
    let burn = (config.burn_in / config.dt).round() as usize;
    let integ_config = IntegratorConfig::new(config.dt, false, config.seed);
    let (a_coef, b_coef, f) = match v {
        CltObservable::A => (1.0, 0.0, None),
        CltObservable::B => (0.0, 1.0, None),
        CltObservable::H(f) => (0.0, 0.0, Some(f.clone())),
        CltObservable::Combo { a_hat, f } => (*a_hat, 1.0, Some(f.clone())),
    };
    let h_sign = if matches!(v, CltObservable::H(_)) { 1.0 } else { -1.0 };
    let rows = par_replicas(config.replicas, |r| {
        let mut rng = replica_rng(config.seed, r);
        let mut p = vec![0.0; n_sites];
        fill_sphere(&mut p, spec, &mut rng);
        let mut gen = f.as_ref().map(|f| TranslateGenerator::open(f, n_sites));
        let mut integ = Integrator::new(&params, &integ_config, coupling, rng)?;
        let mut observe = |p: &[f64]| {
            let mut val = 0.0;
            if a_coef != 0.0 {
                val += a_coef * (p[n_sites - 1] * p[n_sites - 1] - p[0] * p[0]);
            }
            if b_coef != 0.0 {
                for i in 0..n_sites - 1 {
                    val += b_coef * crate::model::bond_current(p[i], p[i + 1], coupling);
                }
            }
            if let Some(g) = gen.as_mut() {
                val += h_sign * g.eval(p, coupling);
            }
            val
        };
        for _ in 0..burn {
            integ.sweep(&mut p)?;
        }
        let (mut s_full, mut s_half, mut s_rich) = (0.0, 0.0, 0.0);
        let mut prev = observe(&p);
        for _ in 0..config.windows_per_replica {
            let mut halves = [0.0; 2];
            for half in &mut halves {
                for _ in 0..half_steps {
                    integ.sweep(&mut p)?;
                    let cur = observe(&p);
                    *half += 0.5 * (prev + cur) * config.dt;
                    prev = cur;
                }
            }
            let [i1, i2] = halves;
            s_full += (i1 + i2).powi(2) / window;
            s_half += (i1 * i1 + i2 * i2) / window;
            s_rich += (i1 * i1 + i2 * i2 + 4.0 * i1 * i2) / window;
        }
        let m = config.windows_per_replica as f64;
        Ok([s_full / m, s_half / m, s_rich / m])
    })?;
    let scale = 1.0 / (2 * config.half_n) as f64;
    let column = |c: usize| Estimate::from_samples(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()).scale(scale);
    Ok(CltReport {
        window,
        at_window: column(0),
        at_half_window: column(1),
        extrapolated: column(2),
        windows: config.replicas * config.windows_per_replica,
    })
}

/// Settings of [`bg_integrals`].
#[derive(Clone, Debug)]
pub struct BgConfig {
    pub params: ModelParams,
    /// Must have `accelerate` set.
    pub integrator: IntegratorConfig,
    pub test: TestFunction,
    /// Integration horizon in macroscopic time.
    pub horizon: f64,
    /// Macroscopic time discarded before integrating.
    pub burn_in: f64,
    pub replicas: usize,
}

/// Per-replica time integrals entering the Boltzmann–Gibbs residual:
/// `current = ∫√N Σ∇_N H W`, `gradient = ∫√N Σ∇_N H (p_x² − p_{x+1}²)` and
/// `dissipative[f] = ∫√N Σ∇_N H L(τ^x F_f)`.
#[derive(Clone, Debug, Serialize)]
pub struct BgIntegrals {
    pub current: f64,
    pub gradient: f64,
    pub dissipative: Vec<f64>,
}

impl BgIntegrals {
    /// `I¹ = current − â·gradient − dissipative[f]`.
    pub fn residual(&self, a_hat: f64, f: usize) -> f64 {
        self.current - a_hat * self.gradient - self.dissipative[f]
    }
}

/// Runs the accelerated periodic dynamics from equilibrium and accumulates
/// [`BgIntegrals`] for each candidate `F` with the trapezoidal rule.
pub fn bg_integrals(config: &BgConfig, fs: &[LocalFunction]) -> Result<Vec<BgIntegrals>> {
    let params = &config.params;
    if params.topology != Topology::Periodic {
        return Err(Error::NotPeriodic);
    }
    if !config.integrator.accelerate {
        return Err(Error::InvalidParameter("the residual needs N² acceleration".into()));
    }
    require_replicas(config.replicas)?;
    config.test.validate()?;
    let n = params.n_sites;
    let dt = config.integrator.dt_macro;
    let steps = (config.horizon / dt).round() as usize;
    let burn = (config.burn_in / dt).round() as usize;
    let root_n = (n as f64).sqrt();
    let weights: Vec<f64> = config.test.discrete_gradient(n).iter().map(|g| root_n * g).collect();
    let gens = fs
        .iter()
        .map(|f| TranslateGenerator::periodic(f, &weights))
        .collect::<Result<Vec<_>>>()?;
    let coupling = &params.coupling;
    par_replicas(config.replicas, |r| {
        let mut rng = replica_rng(config.integrator.seed, r);
        let mut p = vec![0.0; n];
        fill_equilibrium(&mut p, params.y, &mut rng);
        let mut integ = Integrator::new(params, &config.integrator, coupling, rng)?;
        let mut gens = gens.clone();
        for _ in 0..burn {
            integ.sweep(&mut p)?;
        }
        let mut vals = vec![0.0; 2 + fs.len()];
        let mut observe = |p: &[f64], out: &mut [f64]| {
            let (mut w_sum, mut j_sum) = (0.0, 0.0);
            for i in 0..n {
                let j = if i + 1 == n { 0 } else { i + 1 };
                let (a, b) = (p[i], p[j]);
                w_sum += weights[i] * crate::model::bond_current(a, b, coupling);
                j_sum += weights[i] * (a * a - b * b);
            }
            out[0] = w_sum;
            out[1] = j_sum;
            for (o, g) in out[2..].iter_mut().zip(gens.iter_mut()) {
                *o = g.eval(p, coupling);
            }
        };
        observe(&p, &mut vals);
        let mut acc = vec![0.0; vals.len()];
        let mut cur = vals.clone();
        for _ in 0..steps {
            integ.sweep(&mut p)?;
            observe(&p, &mut cur);
            for ((a, v), c) in acc.iter_mut().zip(&vals).zip(&cur) {
                *a += 0.5 * (v + c) * dt;
            }
            std::mem::swap(&mut vals, &mut cur);
        }
        Ok(BgIntegrals {
            current: acc[0],
            gradient: acc[1],
            dissipative: acc[2..].to_vec(),
        })
    })
}

/// `E[(I¹)²]` over a grid of trial coefficients for candidate `f`.
pub fn bg_residual(integrals: &[BgIntegrals], f: usize, a_grid: &[f64], seed: u64) -> Result<StatSeries> {
    require_replicas(integrals.len())?;
    let rows: Vec<Vec<f64>> = integrals
        .iter()
        .map(|r| a_grid.iter().map(|&a| r.residual(a, f).powi(2)).collect())
        .collect();
    Ok(StatSeries::from_replicas(a_grid.to_vec(), &rows, vec![seed]))
}

/// Paired difference `E[(I¹_f)² − (I¹_g)²]` at coefficient `a_hat`; positive
/// when `g` has the smaller residual.
pub fn paired_residual_gap(integrals: &[BgIntegrals], f: usize, g: usize, a_hat: f64) -> Result<Estimate> {
    require_replicas(integrals.len())?;
    let d: Vec<f64> = integrals
        .iter()
        .map(|r| r.residual(a_hat, f).powi(2) - r.residual(a_hat, g).powi(2))
        .collect();
    Ok(Estimate::from_samples(&d))
}

/// The coefficient minimising the sample residual of candidate `f`:
/// `Σ(current − dissipative)·gradient / Σ gradient²`.
pub fn residual_minimizer(integrals: &[BgIntegrals], f: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for r in integrals {
        num += (r.current - r.dissipative[f]) * r.gradient;
        den += r.gradient * r.gradient;
    }
    num / den
}

/// Grid point of smallest residual and whether it is interior.
pub fn grid_minimum(series: &StatSeries) -> (f64, bool) {
    let (idx, _) = series
        .estimates
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    (series.grid[idx], idx > 0 && idx + 1 < series.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::model::CompiledGenerator;
    use crate::polynomial::Monomial;

    #[test]
    fn field_examples() {
        let h = TestFunction::cosine(1);
        let flat = VelocityField::new(vec![1.3; 16], Topology::Periodic);
        assert!(field_eval(&flat, &h, 1.3).unwrap().abs() < 1e-12);
        let open = VelocityField::new(vec![1.0; 16], Topology::Open);
        assert_eq!(field_eval(&open, &h, 1.0), Err(Error::NotPeriodic));
        let p = VelocityField::new((0..9).map(|i| i as f64 * 0.3 - 1.0).collect(), Topology::Periodic);
        let one = TestFunction::Constant { value: 1.0 };
        let expect = (2.0 * p.total_energy() - 9.0 * 0.49) / 3.0;
        assert!((field_eval(&p, &one, 0.7).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ou_examples() {
        let h = TestFunction::cosine(1);
        let v = ou_covariance_predict(&h, &h, 1.0 / (4.0 * PI * PI), 1.0, 1.0).unwrap();
        assert!((v - 2.0 / std::f64::consts::E).abs() < 1e-14);
        assert!((ou_covariance_predict(&h, &h, 0.0, 1.5, 1.0).unwrap() - 2.0 * 1.5f64.powi(4)).abs() < 1e-12);
        let h2 = TestFunction::cosine(2);
        assert_eq!(ou_covariance_predict(&h, &h2, 0.3, 1.0, 1.0).unwrap(), 0.0);
        assert!(ou_covariance_predict(&h, &h, -0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn heat_kernel_matches_fourier_shortcut() {
        let n = 64;
        let fourier = TestFunction::fourier(2, 0.4);
        let values: Vec<f64> = (0..n).map(|j| fourier.value(j as f64 / n as f64)).collect();
        let derivatives: Vec<f64> = (0..n).map(|j| fourier.derivative(j as f64 / n as f64)).collect();
        let tab = TestFunction::Tabulated { values, derivatives };
        let sine = TestFunction::fourier(2, 0.4 - PI / 2.0);
        for lag in [0.0, 0.003, 0.02] {
            let exact = ou_covariance_predict(&fourier, &sine, lag, 1.0, 1.3).unwrap();
            let via_grid = ou_covariance_predict(&tab, &sine, lag, 1.0, 1.3).unwrap();
            assert!((exact - via_grid).abs() < 1e-5, "{lag}: {exact} vs {via_grid}");
        }
    }

    #[test]
    fn tabulated_derivatives_are_consistent() {
        let f = TestFunction::fourier(1, 0.2);
        let m = 32;
        let tab = TestFunction::Tabulated {
            values: (0..m).map(|j| f.value(j as f64 / m as f64)).collect(),
            derivatives: (0..m).map(|j| f.derivative(j as f64 / m as f64)).collect(),
        };
        for u in [0.013, 0.37, 0.999] {
            let e = 1e-6;
            let fd = (tab.value(u + e) - tab.value(u - e)) / (2.0 * e);
            assert!((fd - tab.derivative(u)).abs() < 1e-6);
            let fd2 = (tab.derivative(u + e) - tab.derivative(u - e)) / (2.0 * e);
            assert!((fd2 - tab.second_derivative(u)).abs() < 1e-4);
            assert!((tab.value(u) - f.value(u)).abs() < 1e-4);
        }
        assert!((tab.value(1.0) - tab.value(0.0)).abs() < 1e-15);
    }

    fn sample_function() -> LocalFunction {
        LocalFunction::new(Polynomial::from_terms([
            (Monomial::new([(-1, 2), (1, 2)]), 0.7),
            (Monomial::new([(0, 1), (1, 3)]), -0.4),
            (Monomial::new([(0, 4)]), 0.2),
        ]))
    }

    #[test]
    fn translate_generator_matches_compiled_sum() {
        let f = sample_function();
        let coupling = CouplingSpec::gaussian_bump(0.5, 0.8);
        let n = 9;
        let params = ModelParams::periodic(n, 1.0, coupling).unwrap();
        let weights: Vec<f64> = (0..n).map(|x| (x as f64 * 0.7).sin()).collect();
        let mut sum = Polynomial::zero();
        for (x, &w) in weights.iter().enumerate() {
            sum += &f.translate(x as i32).scale(w);
        }
        let compiled = CompiledGenerator::new(&sum, &params);
        let mut gen = TranslateGenerator::periodic(&f, &weights).unwrap();
        let mut rng = replica_rng(3, 0);
        let mut p = vec![0.0; n];
        for _ in 0..5 {
            fill_equilibrium(&mut p, 1.0, &mut rng);
            let a = compiled.eval(&p, &coupling);
            let b = gen.eval(&p, &coupling);
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }

        let open = ModelParams::open(n, 1.0, coupling).unwrap();
        let k = f.half_width() as i32;
        let mut psi = Polynomial::zero();
        for c in k..(n as i32 - k) {
            psi += &f.translate(c);
        }
        let compiled = CompiledGenerator::new(&psi, &open);
        let mut gen = TranslateGenerator::open(&f, n);
        let a = compiled.eval(&p, &coupling);
        let b = gen.eval(&p, &coupling);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn gradient_model_has_zero_residual() {
        let params = ModelParams::periodic(16, 1.0, CouplingSpec::default()).unwrap();
        let config = BgConfig {
            params,
            integrator: IntegratorConfig::new(1e-4, true, 5),
            test: TestFunction::cosine(1),
            horizon: 0.01,
            burn_in: 0.0,
            replicas: 8,
        };
        let ints = bg_integrals(&config, &[LocalFunction::zero()]).unwrap();
        let res = bg_residual(&ints, 0, &[0.8, 1.0, 1.2], 5).unwrap();
        assert!(res.estimates[1] < 1e-20);
        assert!(res.estimates[0] > 0.0 && res.estimates[2] > 0.0);
        assert!((residual_minimizer(&ints, 0) - 1.0).abs() < 1e-10);
        assert!(matches!(
            bg_integrals(&BgConfig { replicas: 3, ..config }, &[]),
            Err(Error::TooFewReplicas { .. })
        ));
    }

    #[test]
    fn time_covariance_needs_replicas() {
        let s = vec![vec![1.0; 10]; 4];
        assert!(matches!(
            empirical_time_covariance(&s, &s, 0.1, &[0, 1], vec![0]),
            Err(Error::TooFewReplicas { .. })
        ));
    }
}
