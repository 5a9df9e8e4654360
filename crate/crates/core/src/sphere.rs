//! Integration over energy spheres: sampling, closed-form moments, the
//! divergence and telescoping identities, and ensemble-equivalence gaps.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::Observable;
use crate::polynomial::Polynomial;
use crate::stats::{Accumulator, Estimate};

/// The sphere `S^{n−1}(r)` in `R^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub n: usize,
    pub radius: f64,
}

impl SphereSpec {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "sphere dimension must be at least 2, got {n}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        Ok(SphereSpec { n, radius })
    }

    /// Sphere of mean kinetic energy `y²` per coordinate: radius `y√n`.
    pub fn for_model(n: usize, y: f64) -> Result<Self> {
        Self::new(n, y * (n as f64).sqrt())
    }

    pub fn ln_surface_area(&self) -> f64 {
        (2.0f64).ln() + 0.5 * self.n as f64 * PI.ln() - ln_gamma(0.5 * self.n as f64)
            + (self.n as f64 - 1.0) * self.radius.ln()
    }

    pub fn surface_area(&self) -> f64 {
        self.ln_surface_area().exp()
    }

    pub fn ball_volume(&self) -> f64 {
        let n = self.n as f64;
        (0.5 * n * PI.ln() - ln_gamma(0.5 * n + 1.0) + n * self.radius.ln()).exp()
    }
}

/// Writes a uniform point of the sphere into `x` (length `spec.n`).
pub fn fill_sphere<R: Rng + ?Sized>(x: &mut [f64], spec: SphereSpec, rng: &mut R) {
    loop {
        let mut norm2 = 0.0;
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = z;
            norm2 += z * z;
        }
        if norm2 > 0.0 {
            let k = spec.radius / norm2.sqrt();
            x.iter_mut().for_each(|v| *v *= k);
            return;
        }
    }
}

pub fn sample_sphere<R: Rng + ?Sized>(spec: SphereSpec, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; spec.n];
    fill_sphere(&mut x, spec, rng);
    x
}

/// Uniform point of the ball: a sphere point scaled by `U^{1/n}`.
pub fn fill_ball<R: Rng + ?Sized>(x: &mut [f64], spec: SphereSpec, rng: &mut R) {
    fill_sphere(x, spec, rng);
    let u: f64 = rng.random();
    let k = u.powf(1.0 / spec.n as f64);
    x.iter_mut().for_each(|v| *v *= k);
}

/// Exponents `a_k` of the monomial `∏ (x_k²)^{a_k}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentVector(pub Vec<u32>);

impl ExponentVector {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereMoment {
    /// `∫_{S^{n−1}(r)} ∏ x_k^{2a_k} dσ`.
    pub surface_integral: f64,
    /// Same integral divided by the surface area.
    pub normalized_expectation: f64,
}

/// Closed-form moment `S_n(a, r) = 2∏Γ(a_k+½)/Γ(a+n/2) · r^{2a+n−1}`,
/// evaluated in log space.
pub fn moment_closed_form(a: &ExponentVector, spec: SphereSpec) -> Result<SphereMoment> {
    if a.0.len() > spec.n {
        return Err(Error::InvalidParameter(format!(
            "{} exponents for a sphere in R^{}",
            a.0.len(),
            spec.n
        )));
    }
    let ln_norm = ln_normalized_moment(&a.0, spec.n, spec.radius);
    let surface = (ln_norm + spec.ln_surface_area()).exp();
    let normalized = ln_norm.exp();
    if !surface.is_finite() || !normalized.is_finite() {
        return Err(Error::NonFinite("moment_closed_form"));
    }
    Ok(SphereMoment {
        surface_integral: surface,
        normalized_expectation: normalized,
    })
}

/// `ln E[∏ x_k^{2a_k}]` for the uniform measure; zero exponents may be
/// omitted.
fn ln_normalized_moment(a: &[u32], n: usize, r: f64) -> f64 {
    let total: u32 = a.iter().sum();
    let half = ln_gamma(0.5);
    let mut acc = 2.0 * total as f64 * r.ln() + ln_gamma(0.5 * n as f64)
        - ln_gamma(total as f64 + 0.5 * n as f64);
    for &ak in a {
        if ak > 0 {
            acc += ln_gamma(ak as f64 + 0.5) - half;
        }
    }
    acc
}

/// Exact uniform-sphere expectation of a polynomial on `S^{n−1}(r)`.
/// Distinct sites are read as distinct coordinates.
pub fn sphere_polynomial_expectation(poly: &Polynomial, n: usize, r: f64) -> Result<f64> {
    if poly.sites().len() > n {
        return Err(Error::InvalidParameter(format!(
            "polynomial uses {} sites but the sphere lives in R^{n}",
            poly.sites().len()
        )));
    }
    let mut total = 0.0;
    let mut halves = Vec::new();
    for (m, c) in poly.terms() {
        halves.clear();
        let mut odd = false;
        for &(_, e) in m.factors() {
            if e % 2 == 1 {
                odd = true;
                break;
            }
            halves.push(e / 2);
        }
        if odd {
            continue;
        }
        total += c * ln_normalized_moment(&halves, n, r).exp();
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("sphere_polynomial_expectation"))
    }
}

/// `Σ_{i=−N}^{N−1} E[p_i² p_{i+1}²]` on the sphere of `2N+1` coordinates and
/// radius `y√(2N+1)`, from the moment formula.
pub fn adjacent_pair_sum(half_n: usize, y: f64) -> Result<f64> {
    let n = 2 * half_n + 1;
    let spec = SphereSpec::for_model(n, y)?;
    let m = moment_closed_form(&ExponentVector(vec![1, 1]), spec)?;
    Ok(2.0 * half_n as f64 * m.normalized_expectation)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Outcome of a Monte Carlo identity check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub params: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of `lhs − rhs`.
    pub stderr: f64,
    /// `(lhs − rhs) / stderr`.
    pub discrepancy: f64,
    /// Largest pointwise integrand gap seen, where meaningful.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointwise_gap: Option<f64>,
    pub verdict: Verdict,
}

/// Sigma threshold for verdicts.
pub const CHECK_SIGMAS: f64 = 4.0;

fn discrepancy(diff: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        diff / stderr
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY * diff.signum()
    }
}

/// Sampled `E[∏ x_k^{2a_k}]` against [`moment_closed_form`].
pub fn moment_check<R: Rng + ?Sized>(
    a: &ExponentVector,
    spec: SphereSpec,
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    let exact = moment_closed_form(a, spec)?.normalized_expectation;
    let mut acc = Accumulator::default();
    let mut x = vec![0.0; spec.n];
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        acc.push(a.0.iter().zip(&x).map(|(&e, v)| v.powi(2 * e as i32)).product());
    }
    let est = acc.estimate();
    let d = discrepancy(est.value - exact, est.stderr);
    let mut params = BTreeMap::from([
        ("n".into(), spec.n as f64),
        ("radius".into(), spec.radius),
        ("samples".into(), samples as f64),
    ]);
    for (k, &e) in a.0.iter().enumerate() {
        params.insert(format!("a{k}"), e as f64);
    }
    Ok(CheckReport {
        check: "moment".into(),
        params,
        lhs: est.value,
        rhs: exact,
        stderr: est.stderr,
        discrepancy: d,
        pointwise_gap: None,
        verdict: Verdict::from_bool(d.abs() <= CHECK_SIGMAS),
    })
}

/// `r ∫_{B^n(r)} ∂f/∂x_i dx` against `∫_{S^{n−1}(r)} f x_i dσ`, each by
/// independent Monte Carlo.
pub fn divergence_check<R: Rng + ?Sized>(
    f: &dyn Observable,
    i: usize,
    spec: SphereSpec,
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    if i >= spec.n {
        return Err(Error::InvalidParameter(format!(
            "coordinate {i} outside R^{}",
            spec.n
        )));
    }
    let mut ball = Accumulator::default();
    let mut surf = Accumulator::default();
    let mut x = vec![0.0; spec.n];
    for _ in 0..samples {
        fill_ball(&mut x, spec, rng);
        ball.push(f.partial(&x, i));
        fill_sphere(&mut x, spec, rng);
        surf.push(f.value(&x) * x[i]);
    }
    let kb = spec.radius * spec.ball_volume();
    let ks = spec.surface_area();
    let lhs = ball.estimate().scale(kb);
    let rhs = surf.estimate().scale(ks);
    let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
    let d = discrepancy(lhs.value - rhs.value, se);
    Ok(CheckReport {
        check: "divergence".into(),
        params: BTreeMap::from([
            ("n".into(), spec.n as f64),
            ("radius".into(), spec.radius),
            ("coordinate".into(), i as f64),
            ("samples".into(), samples as f64),
        ]),
        lhs: lhs.value,
        rhs: rhs.value,
        stderr: se,
        discrepancy: d,
        pointwise_gap: None,
        verdict: Verdict::from_bool(d.abs() <= CHECK_SIGMAS),
    })
}

/// `X_{i,j} f = x_j ∂_i f − x_i ∂_j f`.
#[inline]
pub fn rotation_derivative(f: &dyn Observable, x: &[f64], i: usize, j: usize) -> f64 {
    x[j] * f.partial(x, i) - x[i] * f.partial(x, j)
}

/// Compares `E[X_{i,j}(f) x_i x_j]` with `E[Σ_{k=i}^{j−1} X_{k,k+1}(f) x_k x_{k+1}]`
/// under the uniform sphere measure, using paired samples. The two
/// integrands differ pointwise; the largest gap seen is reported.
pub fn telescoping_check<R: Rng + ?Sized>(
    f: &dyn Observable,
    i: usize,
    j: usize,
    spec: SphereSpec,
    samples: usize,
    rng: &mut R,
) -> Result<CheckReport> {
    if !(i < j && j < spec.n) {
        return Err(Error::InvalidParameter(format!(
            "telescoping needs i < j < n, got i={i}, j={j}, n={}",
            spec.n
        )));
    }
    let mut left = Accumulator::default();
    let mut right = Accumulator::default();
    let mut diff = Accumulator::default();
    let mut gap: f64 = 0.0;
    let mut x = vec![0.0; spec.n];
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        let l = rotation_derivative(f, &x, i, j) * x[i] * x[j];
        let r: f64 = (i..j)
            .map(|k| rotation_derivative(f, &x, k, k + 1) * x[k] * x[k + 1])
            .sum();
        left.push(l);
        right.push(r);
        diff.push(l - r);
        gap = gap.max((l - r).abs());
    }
    let d = diff.estimate();
    let disc = discrepancy(d.value, d.stderr);
    Ok(CheckReport {
        check: "telescoping".into(),
        params: BTreeMap::from([
            ("n".into(), spec.n as f64),
            ("radius".into(), spec.radius),
            ("i".into(), i as f64),
            ("j".into(), j as f64),
            ("samples".into(), samples as f64),
        ]),
        lhs: left.mean(),
        rhs: right.mean(),
        stderr: d.stderr,
        discrepancy: disc,
        pointwise_gap: Some(gap),
        verdict: Verdict::from_bool(disc.abs() <= CHECK_SIGMAS),
    })
}

/// `N·|E_sphere[g] − E_gauss[g]|` on the sphere of `N` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleGap {
    pub n: usize,
    pub sphere: f64,
    pub gaussian: f64,
    pub scaled_gap: f64,
    pub stderr: f64,
}

/// Exact ensemble gap for a polynomial observable (sites read as distinct
/// coordinates of `R^N`).
pub fn ensemble_gap(g: &Polynomial, n: usize, y: f64) -> Result<EnsembleGap> {
    let spec = SphereSpec::for_model(n, y)?;
    let sphere = sphere_polynomial_expectation(g, n, spec.radius)?;
    let gaussian = g.gaussian_expectation(y);
    Ok(EnsembleGap {
        n,
        sphere,
        gaussian,
        scaled_gap: n as f64 * (sphere - gaussian).abs(),
        stderr: 0.0,
    })
}

/// Monte Carlo ensemble gap for a generic observable; the Gaussian side is
/// sampled too, with independent draws.
pub fn ensemble_gap_mc<R: Rng + ?Sized>(
    g: &dyn Observable,
    n: usize,
    y: f64,
    samples: usize,
    rng: &mut R,
) -> Result<EnsembleGap> {
    let spec = SphereSpec::for_model(n, y)?;
    let mut s = Accumulator::default();
    let mut gs = Accumulator::default();
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        fill_sphere(&mut x, spec, rng);
        s.push(g.value(&x));
        crate::model::fill_equilibrium(&mut x, y, rng);
        gs.push(g.value(&x));
    }
    let (se, ge): (Estimate, Estimate) = (s.estimate(), gs.estimate());
    Ok(EnsembleGap {
        n,
        sphere: se.value,
        gaussian: ge.value,
        scaled_gap: n as f64 * (se.value - ge.value).abs(),
        stderr: n as f64 * (se.stderr.powi(2) + ge.stderr.powi(2)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    #[test]
    fn circle_moments() {
        let spec = SphereSpec::new(2, 1.0).unwrap();
        let m = moment_closed_form(&ExponentVector(vec![1, 0]), spec).unwrap();
        assert!((m.surface_integral - PI).abs() < 1e-13);
        assert!((m.normalized_expectation - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_exponent_gives_surface_area() {
        for &(n, r) in &[(2usize, 1.0), (3, 2.0), (7, 0.5), (300, 1.3)] {
            let spec = SphereSpec::new(n, r).unwrap();
            let m = moment_closed_form(&ExponentVector(vec![0; n]), spec).unwrap();
            assert!((m.normalized_expectation - 1.0).abs() < 1e-12);
            if n < 50 {
                let area = 2.0 * PI.powf(n as f64 / 2.0) * r.powi(n as i32 - 1)
                    / statrs::function::gamma::gamma(n as f64 / 2.0);
                assert!((m.surface_integral - area).abs() < 1e-12 * area);
            }
        }
    }

    #[test]
    fn fourth_moments() {
        let (n, r) = (9usize, 2.5f64);
        let spec = SphereSpec::new(n, r).unwrap();
        let nn = (n * (n + 2)) as f64;
        let p4 = moment_closed_form(&ExponentVector(vec![2]), spec).unwrap();
        let p22 = moment_closed_form(&ExponentVector(vec![1, 1]), spec).unwrap();
        assert!((p4.normalized_expectation - 3.0 * r.powi(4) / nn).abs() < 1e-12);
        assert!((p22.normalized_expectation - r.powi(4) / nn).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_reported() {
        let spec = SphereSpec::new(3, 1e6).unwrap();
        assert!(matches!(
            moment_closed_form(&ExponentVector(vec![100, 100, 100]), spec),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn samples_lie_on_sphere() {
        let spec = SphereSpec::new(6, 3.0).unwrap();
        let mut rng = replica_rng(1, 0);
        for _ in 0..100 {
            let x = sample_sphere(spec, &mut rng);
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjacent_pairs_match_closed_form() {
        for half in 1..=50usize {
            let y = 1.3f64;
            let n = 2.0 * half as f64;
            let exact = n * (n + 1.0) * y.powi(4) / (n + 3.0);
            let got = adjacent_pair_sum(half, y).unwrap();
            assert!((got - exact).abs() < 1e-12 * exact, "N={half}");
        }
    }

    #[test]
    fn divergence_on_circle() {
        let spec = SphereSpec::new(2, 1.0).unwrap();
        let f = Polynomial::var(0);
        let mut rng = replica_rng(2, 0);
        let rep = divergence_check(&f, 0, spec, 200_000, &mut rng).unwrap();
        assert!((rep.lhs - PI).abs() < 1e-12);
        assert!((rep.rhs - PI).abs() < 5.0 * rep.stderr);
        assert!(rep.verdict.passed());
        let one = Polynomial::constant(1.0);
        let rep = divergence_check(&one, 1, spec, 10_000, &mut rng).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.verdict.passed());
    }

    #[test]
    fn telescoping_for_product_and_radial() {
        let spec = SphereSpec::new(7, 1.0).unwrap();
        let mut rng = replica_rng(3, 0);
        // f = x₁x₅: both sides reduce to E[x₁²x₅²]-type moments
        let f = Polynomial::monomial(&[(1, 1), (5, 1)], 1.0);
        let rep = telescoping_check(&f, 1, 5, spec, 100_000, &mut rng).unwrap();
        // lhs integrand = (x₅² − x₁²) x₁ x₅ ... expectation 0 by symmetry
        assert!(rep.verdict.passed(), "{rep:?}");
        let u = (0..7).fold(Polynomial::zero(), |a, s| a + Polynomial::monomial(&[(s, 2)], 1.0));
        let rep = telescoping_check(&u, 1, 5, spec, 1000, &mut rng).unwrap();
        assert!(rep.lhs.abs() < 1e-14 && rep.rhs.abs() < 1e-14);
    }

    #[test]
    fn ensemble_gap_examples() {
        let y = 1.0;
        let p2 = Polynomial::monomial(&[(0, 2)], 1.0);
        assert!(ensemble_gap(&p2, 16, y).unwrap().scaled_gap < 1e-12);
        let p4 = Polynomial::monomial(&[(0, 4)], 1.0);
        for n in [8usize, 64, 256] {
            let g = ensemble_gap(&p4, n, y).unwrap();
            let exact = n as f64 * 6.0 / (n as f64 + 2.0);
            assert!((g.scaled_gap - exact).abs() < 1e-10 * exact);
        }
    }
}
