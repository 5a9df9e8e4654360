//! Model state, generator, currents and equilibrium measures.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::{Coupling, CouplingSpec};
use crate::error::{Error, Result};
use crate::polynomial::Polynomial;
use crate::quadrature::PairMoments;
use crate::sphere;
use crate::stats::{Accumulator, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Periodic,
    Open,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Periodic => "periodic",
            Topology::Open => "open",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub n_sites: usize,
    pub y: f64,
    #[serde(default)]
    pub coupling: CouplingSpec,
    pub topology: Topology,
}

impl ModelParams {
    pub fn new(n_sites: usize, y: f64, coupling: CouplingSpec, topology: Topology) -> Result<Self> {
        let p = ModelParams {
            n_sites,
            y,
            coupling,
            topology,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn periodic(n_sites: usize, y: f64, coupling: CouplingSpec) -> Result<Self> {
        Self::new(n_sites, y, coupling, Topology::Periodic)
    }

    pub fn open(n_sites: usize, y: f64, coupling: CouplingSpec) -> Result<Self> {
        Self::new(n_sites, y, coupling, Topology::Open)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 3 {
            return Err(Error::InvalidParameter(format!(
                "n_sites must be at least 3, got {}",
                self.n_sites
            )));
        }
        if !(self.y > 0.0 && self.y.is_finite()) {
            return Err(Error::InvalidParameter(format!("y must be positive, got {}", self.y)));
        }
        self.coupling.validate()
    }

    pub fn n_bonds(&self) -> usize {
        match self.topology {
            Topology::Periodic => self.n_sites,
            Topology::Open => self.n_sites - 1,
        }
    }

    /// Sites `(x, x+1)` joined by bond `x`.
    pub fn bond_sites(&self, x: usize) -> Result<(usize, usize)> {
        if x >= self.n_bonds() {
            return Err(Error::InvalidBond {
                bond: x,
                n_sites: self.n_sites,
                topology: self.topology.name(),
            });
        }
        Ok((x, (x + 1) % self.n_sites))
    }

    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_bonds()).map(move |x| (x, (x + 1) % self.n_sites))
    }
}

/// A configuration of velocities on the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    pub p: Vec<f64>,
    pub topology: Topology,
}

impl VelocityField {
    pub fn new(p: Vec<f64>, topology: Topology) -> Self {
        VelocityField { p, topology }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn total_energy(&self) -> f64 {
        total_energy(&self.p)
    }

    pub fn norm(&self) -> f64 {
        self.p.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A function of the configuration with analytic derivatives.
pub trait Observable: Sync {
    fn value(&self, p: &[f64]) -> f64;
    fn partial(&self, p: &[f64], i: usize) -> f64;
    /// `None` when second derivatives are not available.
    fn second_partial(&self, p: &[f64], i: usize, j: usize) -> Option<f64>;
    /// Sites the observable depends on, if known. Lets the generator skip
    /// bonds that cannot contribute.
    fn support(&self) -> Option<Vec<usize>> {
        None
    }
}

/// Polynomial observables read site `s` as array index `s`; sites must lie
/// in `0..n_sites`.
impl Observable for Polynomial {
    fn value(&self, p: &[f64]) -> f64 {
        self.eval_slice(p)
    }

    fn partial(&self, p: &[f64], i: usize) -> f64 {
        self.partial(i as i32).eval_slice(p)
    }

    fn second_partial(&self, p: &[f64], i: usize, j: usize) -> Option<f64> {
        Some(self.partial(i as i32).partial(j as i32).eval_slice(p))
    }

    fn support(&self) -> Option<Vec<usize>> {
        Some(self.sites().into_iter().map(|s| s as usize).collect())
    }
}

/// `½ Σ p_x²`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TotalEnergy;

impl Observable for TotalEnergy {
    fn value(&self, p: &[f64]) -> f64 {
        total_energy(p)
    }

    fn partial(&self, p: &[f64], i: usize) -> f64 {
        p[i]
    }

    fn second_partial(&self, _p: &[f64], i: usize, j: usize) -> Option<f64> {
        Some(if i == j { 1.0 } else { 0.0 })
    }
}

pub fn total_energy(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|x| x * x).sum::<f64>()
}

/// Energy current across the bond `(r, s) = (p_x, p_{x+1})`.
#[inline]
pub fn bond_current(r: f64, s: f64, coupling: &dyn Coupling) -> f64 {
    coupling.value(r, s) * (r * r - s * s) - coupling.rotation_derivative(r, s) * r * s
}

/// Current `W_{x,x+1}` across bond `x`.
pub fn current(p: &VelocityField, x: usize, params: &ModelParams) -> Result<f64> {
    let (i, j) = params.bond_sites(x)?;
    Ok(bond_current(p.p[i], p.p[j], &params.coupling))
}

/// One bond's part of the generator, `½[a X²f + (Xa)(Xf)]` on sites `(i, j)`.
pub fn bond_generator(
    f: &dyn Observable,
    p: &[f64],
    i: usize,
    j: usize,
    coupling: &dyn Coupling,
) -> Result<f64> {
    let (r, s) = (p[i], p[j]);
    let fi = f.partial(p, i);
    let fj = f.partial(p, j);
    let fii = f.second_partial(p, i, i).ok_or(Error::MissingSecondDerivatives)?;
    let fjj = f.second_partial(p, j, j).ok_or(Error::MissingSecondDerivatives)?;
    let fij = f.second_partial(p, i, j).ok_or(Error::MissingSecondDerivatives)?;
    let xf = s * fi - r * fj;
    let x2f = s * s * fii - 2.0 * r * s * fij + r * r * fjj - r * fi - s * fj;
    Ok(0.5 * (coupling.value(r, s) * x2f + coupling.rotation_derivative(r, s) * xf))
}

/// `(L f)(p)`: sum of bond generators over the chain.
pub fn apply_generator(f: &dyn Observable, p: &VelocityField, params: &ModelParams) -> Result<f64> {
    let touched = f.support().map(|s| {
        let mut mask = vec![false; params.n_sites];
        for i in s {
            if i < params.n_sites {
                mask[i] = true;
            }
        }
        mask
    });
    let mut total = 0.0;
    for (i, j) in params.bonds() {
        if let Some(mask) = &touched {
            if !mask[i] && !mask[j] {
                continue;
            }
        }
        total += bond_generator(f, &p.p, i, j, &params.coupling)?;
    }
    Ok(total)
}

/// Fills `p` with i.i.d. `N(0, y²)` entries.
pub fn fill_equilibrium<R: Rng + ?Sized>(p: &mut [f64], y: f64, rng: &mut R) {
    for v in p.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = y * z;
    }
}

pub fn sample_equilibrium<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> VelocityField {
    let mut p = vec![0.0; params.n_sites];
    fill_equilibrium(&mut p, params.y, rng);
    VelocityField::new(p, params.topology)
}

/// Reference measure for a Dirichlet form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Measure {
    /// Gaussian product measure of variance `y²` per site.
    Gaussian,
    /// Uniform measure on the sphere of radius `y√n_sites`. Non-constant
    /// couplings are integrated by Monte Carlo with the given budget.
    Microcanonical { samples: usize, seed: u64 },
}

/// `E[a(p_i, p_j) (X_{i,j} f)²]` under the Gaussian product measure.
pub fn bond_energy(f: &Polynomial, i: i32, j: i32, coupling: &dyn Coupling, y: f64) -> Result<f64> {
    let xf = f.rotation_field(i, j);
    if xf.is_zero() {
        return Ok(0.0);
    }
    let sq = &xf * &xf;
    let pm = PairMoments::new(coupling, y, sq.max_exponent() as usize);
    pm.expect(&sq, i, j)
}

/// `½ Σ_bonds E[a (X_{x,x+1} f)²]` for a polynomial observable.
pub fn dirichlet_form(f: &Polynomial, params: &ModelParams, measure: Measure) -> Result<Estimate> {
    params.validate()?;
    let mut bond_polys = Vec::new();
    for (i, j) in params.bonds() {
        let xf = f.rotation_field(i as i32, j as i32);
        if !xf.is_zero() {
            bond_polys.push((i, j, xf));
        }
    }
    match measure {
        Measure::Gaussian => {
            let mut total = 0.0;
            for (i, j, xf) in &bond_polys {
                let sq = xf * xf;
                let pm = PairMoments::new(&params.coupling, params.y, sq.max_exponent() as usize);
                total += pm.expect(&sq, *i as i32, *j as i32)?;
            }
            Ok(Estimate::exact(0.5 * total))
        }
        Measure::Microcanonical { samples, seed } => {
            let n = params.n_sites;
            let radius = params.y * (n as f64).sqrt();
            if let Some(a0) = params.coupling.constant_value() {
                let mut total = 0.0;
                for (_, _, xf) in &bond_polys {
                    total += sphere::sphere_polynomial_expectation(&(xf * xf), n, radius)?;
                }
                return Ok(Estimate::exact(0.5 * a0 * total));
            }
            if samples < 2 {
                return Err(Error::InvalidParameter(
                    "microcanonical Dirichlet form needs a sampling budget".into(),
                ));
            }
            let mut rng = crate::rng::replica_rng(seed, 0);
            let mut acc = Accumulator::default();
            let mut x = vec![0.0; n];
            let spec = sphere::SphereSpec::new(n, radius)?;
            for _ in 0..samples {
                sphere::fill_sphere(&mut x, spec, &mut rng);
                let mut v = 0.0;
                for (i, j, xf) in &bond_polys {
                    let g = xf.eval_slice(&x);
                    v += params.coupling.value(x[*i], x[*j]) * g * g;
                }
                acc.push(0.5 * v);
            }
            Ok(acc.estimate())
        }
    }
}

/// Monte Carlo Dirichlet form for a generic observable under the Gaussian
/// measure.
pub fn dirichlet_form_mc<R: Rng + ?Sized>(
    f: &dyn Observable,
    params: &ModelParams,
    samples: usize,
    rng: &mut R,
) -> Result<Estimate> {
    params.validate()?;
    let mut acc = Accumulator::default();
    let mut p = vec![0.0; params.n_sites];
    for _ in 0..samples {
        fill_equilibrium(&mut p, params.y, rng);
        let mut v = 0.0;
        for (i, j) in params.bonds() {
            let xf = p[j] * f.partial(&p, i) - p[i] * f.partial(&p, j);
            v += params.coupling.value(p[i], p[j]) * xf * xf;
        }
        acc.push(0.5 * v);
    }
    Ok(acc.estimate())
}

/// Flattened polynomial for hot evaluation loops; sites are array indices.
#[derive(Clone, Debug, Default)]
pub struct FlatPolynomial {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl FlatPolynomial {
    /// Sites are reduced modulo `n` so periodic translates evaluate directly.
    pub fn new(poly: &Polynomial, n: usize) -> Self {
        let wrapped = poly.wrap(n);
        FlatPolynomial {
            terms: wrapped
                .terms()
                .map(|(m, c)| {
                    (
                        c,
                        m.factors().iter().map(|&(s, e)| (s as usize, e as i32)).collect(),
                    )
                })
                .collect(),
        }
    }

    #[inline]
    pub fn eval(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, fs) in &self.terms {
            let mut t = *c;
            for &(s, e) in fs {
                t *= p[s].powi(e);
            }
            total += t;
        }
        total
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `L f` for a fixed polynomial `f`, prepared once: per bond the symbolic
/// `X f` and `X² f`, leaving only the coupling to be evaluated numerically.
#[derive(Clone, Debug)]
pub struct CompiledGenerator {
    bonds: Vec<(usize, usize, FlatPolynomial, FlatPolynomial)>,
}

impl CompiledGenerator {
    pub fn new(f: &Polynomial, params: &ModelParams) -> Self {
        let n = params.n_sites;
        let f = f.wrap(n);
        let mut bonds = Vec::new();
        for (i, j) in params.bonds() {
            let xf = f.rotation_field(i as i32, j as i32);
            if xf.is_zero() {
                continue;
            }
            let x2f = xf.rotation_field(i as i32, j as i32);
            bonds.push((i, j, FlatPolynomial::new(&xf, n), FlatPolynomial::new(&x2f, n)));
        }
        CompiledGenerator { bonds }
    }

    #[inline]
    pub fn eval(&self, p: &[f64], coupling: &dyn Coupling) -> f64 {
        let mut total = 0.0;
        for (i, j, xf, x2f) in &self.bonds {
            let (r, s) = (p[*i], p[*j]);
            let mut v = coupling.value(r, s) * x2f.eval(p);
            let xa = coupling.rotation_derivative(r, s);
            if xa != 0.0 {
                v += xa * xf.eval(p);
            }
            total += 0.5 * v;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn chain(n: usize, coupling: CouplingSpec) -> ModelParams {
        ModelParams::periodic(n, 1.0, coupling).unwrap()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(total_energy(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(total_energy(&[1.0, 1.0, 1.0]), 1.5);
        let mut rng = replica_rng(7, 0);
        let params = chain(8, CouplingSpec::default());
        let p = sample_equilibrium(&params, &mut rng);
        // compensated re-summation
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for x in &p.p {
            let t = sum + x * x;
            comp += if sum.abs() >= (x * x).abs() {
                (sum - t) + x * x
            } else {
                (x * x - t) + sum
            };
            sum = t;
        }
        assert!((p.total_energy() - 0.5 * (sum + comp)).abs() <= 1e-15 * p.total_energy());
    }

    #[test]
    fn current_examples() {
        let params = chain(4, CouplingSpec::default());
        let p = VelocityField::new(vec![2.0, 1.0, 0.0, 0.0], Topology::Periodic);
        assert_eq!(current(&p, 0, &params).unwrap(), 3.0);
        let q = VelocityField::new(vec![1.5, 1.5, 0.0, 0.0], Topology::Periodic);
        assert_eq!(current(&q, 0, &params).unwrap(), 0.0);
        assert!(matches!(current(&p, 4, &params), Err(Error::InvalidBond { .. })));
        let open = ModelParams::open(4, 1.0, CouplingSpec::default()).unwrap();
        assert!(current(&p, 3, &open).is_err());
    }

    #[test]
    fn bump_current_matches_hand_expansion() {
        // a = 1 + ε e^{-(r²+s²)/2w²}; X a = s a_r − r a_s = 0 for radial a,
        // so W = a (r² − s²). At (1,−1) that is 0; at (1, 0.5) it is
        // (1 + ε e^{-1.25/2}) · 0.75.
        let a = CouplingSpec::gaussian_bump(0.5, 1.0);
        assert!(bond_current(1.0, -1.0, &a).abs() < 1e-15);
        let expect = (1.0 + 0.5 * (-0.625f64).exp()) * 0.75;
        assert!((bond_current(1.0, 0.5, &a) - expect).abs() < 1e-15);
    }

    #[test]
    fn generator_examples() {
        let params = chain(5, CouplingSpec::default());
        let mut rng = replica_rng(11, 0);
        let p = sample_equilibrium(&params, &mut rng);
        assert!(apply_generator(&TotalEnergy, &p, &params).unwrap().abs() < 1e-12);
        let f = Polynomial::monomial(&[(0, 2)], 1.0);
        let lf = apply_generator(&f, &p, &params).unwrap();
        let x = &p.p;
        assert!((lf - (x[1] * x[1] + x[4] * x[4] - 2.0 * x[0] * x[0])).abs() < 1e-12);
        let c = Polynomial::constant(3.0);
        assert_eq!(apply_generator(&c, &p, &params).unwrap(), 0.0);
    }

    struct NoHessian;
    impl Observable for NoHessian {
        fn value(&self, p: &[f64]) -> f64 {
            p[0]
        }
        fn partial(&self, _p: &[f64], i: usize) -> f64 {
            if i == 0 {
                1.0
            } else {
                0.0
            }
        }
        fn second_partial(&self, _: &[f64], _: usize, _: usize) -> Option<f64> {
            None
        }
    }

    #[test]
    fn generator_requires_second_derivatives() {
        let params = chain(3, CouplingSpec::default());
        let p = VelocityField::new(vec![1.0, 2.0, 3.0], Topology::Periodic);
        assert_eq!(
            apply_generator(&NoHessian, &p, &params),
            Err(Error::MissingSecondDerivatives)
        );
    }

    #[test]
    fn compiled_generator_agrees_with_direct() {
        let a = CouplingSpec::gaussian_bump(0.7, 0.8);
        let params = chain(6, a);
        let f = Polynomial::monomial(&[(0, 1), (1, 3)], 0.5)
            + Polynomial::monomial(&[(-1, 2), (1, 1)], -1.25)
            + Polynomial::monomial(&[(2, 4)], 0.1);
        let wrapped = f.wrap(6);
        let comp = CompiledGenerator::new(&f, &params);
        let mut rng = replica_rng(3, 0);
        for _ in 0..20 {
            let p = sample_equilibrium(&params, &mut rng);
            let direct = apply_generator(&wrapped, &p, &params).unwrap();
            let fast = comp.eval(&p.p, &a);
            assert!((direct - fast).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn dirichlet_form_examples() {
        let params = chain(4, CouplingSpec::default());
        let c = Polynomial::constant(1.0);
        assert_eq!(dirichlet_form(&c, &params, Measure::Gaussian).unwrap().value, 0.0);
        // single bond: ½ E[(p₁² − p₀²)²] = ½ (3 + 3 − 2) = 2
        let f = Polynomial::monomial(&[(0, 1), (1, 1)], 1.0);
        let one = CouplingSpec::default();
        assert!((0.5 * bond_energy(&f, 0, 1, &one, 1.0).unwrap() - 2.0).abs() < 1e-14);
        // total energy is annihilated on every bond
        let u: Polynomial = (0..4).fold(Polynomial::zero(), |acc, s| acc + Polynomial::monomial(&[(s, 2)], 1.0));
        let d = dirichlet_form(
            &u,
            &params,
            Measure::Microcanonical {
                samples: 0,
                seed: 1,
            },
        )
        .unwrap();
        assert!(d.value.abs() < 1e-14);
    }

    #[test]
    fn microcanonical_form_of_weighted_energy() {
        // U = Σ x p_x² on an open chain: X_{x,x+1} U = −2 p_x p_{x+1},
        // so D = ½ Σ_bonds 4 E_sphere[p_x² p_{x+1}²] = 2 (n−1) r⁴ / (n(n+2)).
        let n = 5;
        let params = ModelParams::open(n, 1.0, CouplingSpec::default()).unwrap();
        let u = (0..n as i32).fold(Polynomial::zero(), |acc, s| {
            acc + Polynomial::monomial(&[(s, 2)], s as f64)
        });
        let d = dirichlet_form(&u, &params, Measure::Microcanonical { samples: 0, seed: 0 }).unwrap();
        let r4 = (n * n) as f64;
        let exact = 2.0 * (n - 1) as f64 * r4 / (n * (n + 2)) as f64;
        assert!((d.value - exact).abs() < 1e-12);
        // the Monte Carlo branch agrees for a non-constant coupling close to 1
        let bump = ModelParams::open(n, 1.0, CouplingSpec::gaussian_bump(0.01, 1.0)).unwrap();
        let mc = dirichlet_form(&u, &bump, Measure::Microcanonical { samples: 200_000, seed: 4 }).unwrap();
        assert!((mc.value - exact).abs() < 4.0 * mc.stderr + 0.011 * exact);
    }

    #[test]
    fn gaussian_form_matches_monte_carlo() {
        let a = CouplingSpec::gaussian_bump(0.5, 1.0);
        let params = ModelParams::open(3, 1.0, a).unwrap();
        let f = Polynomial::monomial(&[(0, 1), (1, 1)], 1.0) + Polynomial::monomial(&[(1, 3)], 0.3);
        let exact = dirichlet_form(&f, &params, Measure::Gaussian).unwrap().value;
        let mut rng = replica_rng(5, 0);
        let mc = dirichlet_form_mc(&f, &params, 400_000, &mut rng).unwrap();
        assert!(mc.z_score(exact).abs() < 4.0, "{exact} vs {mc:?}");
    }
}
