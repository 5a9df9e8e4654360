//! Ritz minimisation of the diffusion-coefficient functional over local
//! polynomial bases, membership checks for cyclic gradients, and exact
//! finite-volume CLT variances of gradient-type observables.

use std::collections::BTreeSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{Coupling, CouplingSpec};
use crate::error::{Error, Result};
use crate::model::{dirichlet_form, Measure, ModelParams};
use crate::polynomial::{Monomial, Polynomial};
use crate::quadrature::PairMoments;
use crate::sphere::{sphere_polynomial_expectation, SphereSpec};
use crate::stats::Estimate;

/// A polynomial in the sites `−k..=k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFunction {
    poly: Polynomial,
    half_width: u32,
}

impl LocalFunction {
    pub fn new(poly: Polynomial) -> Self {
        let half_width = poly
            .site_range()
            .map(|(lo, hi)| lo.unsigned_abs().max(hi.unsigned_abs()))
            .unwrap_or(0);
        LocalFunction { poly, half_width }
    }

    pub fn zero() -> Self {
        Self::new(Polynomial::zero())
    }

    pub fn monomial(m: Monomial) -> Self {
        Self::new(Polynomial::from_terms([(m, 1.0)]))
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn half_width(&self) -> u32 {
        self.half_width
    }

    /// Translation `τ^j`.
    pub fn translate(&self, j: i32) -> Polynomial {
        self.poly.shift(j)
    }

    pub fn scale(&self, k: f64) -> LocalFunction {
        LocalFunction {
            poly: self.poly.scale(k),
            half_width: self.half_width,
        }
    }

    /// `Σ c_i F_i`.
    pub fn combine(basis: &[LocalFunction], coeffs: &[f64]) -> LocalFunction {
        let mut p = Polynomial::zero();
        for (f, &c) in basis.iter().zip(coeffs) {
            if c != 0.0 {
                p += &f.poly.scale(c);
            }
        }
        LocalFunction::new(p)
    }
}

/// `X_{0,1}` applied to the formal sum `Σ_j τ^j F`. Only translates
/// touching sites 0 or 1 contribute, so the result is an exact polynomial on
/// sites `−2k..=2k+1`.
pub fn cyclic_gradient(f: &LocalFunction) -> Polynomial {
    let Some((lo, hi)) = f.poly.site_range() else {
        return Polynomial::zero();
    };
    let mut tilde = Polynomial::zero();
    // τ^j F lives on lo+j..hi+j; it touches {0,1} for j in −hi..=1−lo
    for j in -hi..=(1 - lo) {
        tilde += &f.poly.shift(j);
    }
    tilde.rotation_field(0, 1).prune(0.0)
}

/// `E[a(p₀,p₁)(p₀p₁ + ξ)²]` for the given `ξ`.
pub fn quadratic_form_of(xi: &Polynomial, y: f64, coupling: &dyn Coupling) -> Result<f64> {
    let g = Polynomial::monomial(&[(0, 1), (1, 1)], 1.0) + xi.clone();
    let sq = &g * &g;
    let pm = PairMoments::new(coupling, y, sq.max_exponent() as usize);
    pm.expect(&sq, 0, 1)
}

/// The functional `a(y, F) = E[a(p₀,p₁)(p₀p₁ + X_{0,1}F̃)²]`.
pub fn quadratic_form(y: f64, f: &LocalFunction, coupling: &dyn Coupling) -> Result<f64> {
    quadratic_form_of(&cyclic_gradient(f), y, coupling)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    /// Every monomial.
    All,
    /// Odd total degree.
    Odd,
    /// Even total degree.
    Even,
    /// Even exponent at every site.
    EvenPerSite,
}

impl Parity {
    fn admits(self, m: &Monomial) -> bool {
        match self {
            Parity::All => true,
            Parity::Odd => m.degree() % 2 == 1,
            Parity::Even => m.degree() % 2 == 0,
            Parity::EvenPerSite => m.factors().iter().all(|&(_, e)| e % 2 == 0),
        }
    }
}

/// Monomial basis of local functions: total degree `1..=degree` on sites
/// `−half_width..=half_width`, filtered by parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub degree: u32,
    pub half_width: u32,
    pub parity: Parity,
}

impl BasisSpec {
    pub fn new(degree: u32, half_width: u32, parity: Parity) -> Self {
        BasisSpec {
            degree,
            half_width,
            parity,
        }
    }

    /// For couplings even in each slot only even-per-site functions can
    /// correlate with `p₀p₁`, and degree 4 is not enough to move the
    /// minimum, so the default goes to degree 6.
    pub fn default_for(coupling: &dyn Coupling) -> Self {
        if coupling.is_symmetric() {
            BasisSpec::new(6, 2, Parity::EvenPerSite)
        } else {
            BasisSpec::new(3, 2, Parity::All)
        }
    }

    pub fn label(&self) -> String {
        format!("degree<={},half_width={},parity={:?}", self.degree, self.half_width, self.parity)
    }
}

/// Enumerates the basis. Monomials that differ by a translation have the
/// same cyclic gradient, so each class is represented once (leftmost site
/// at 0, shifted to stay inside the window); monomials with vanishing
/// cyclic gradient are dropped.
pub fn default_basis(spec: &BasisSpec) -> Vec<LocalFunction> {
    let k = spec.half_width as i32;
    let width = (2 * k + 1) as usize;
    let mut seen: BTreeSet<Monomial> = BTreeSet::new();
    let mut out = Vec::new();
    let mut exps = vec![0u32; width];
    enumerate(&mut exps, 0, spec.degree, &mut |e: &[u32]| {
        let total: u32 = e.iter().sum();
        if total == 0 {
            return;
        }
        let m = Monomial::new(e.iter().enumerate().map(|(i, &x)| (i as i32, x)));
        if !spec.parity.admits(&m) {
            return;
        }
        let lo = m.min_site().unwrap_or(0);
        let canon = m.shift(-lo);
        if !seen.insert(canon.clone()) {
            return;
        }
        let f = LocalFunction::monomial(canon.shift(-k));
        if !cyclic_gradient(&f).is_zero() {
            out.push(f);
        }
    });
    out
}

fn enumerate(exps: &mut Vec<u32>, pos: usize, budget: u32, visit: &mut dyn FnMut(&[u32])) {
    if pos == exps.len() {
        visit(exps);
        return;
    }
    for e in 0..=budget {
        exps[pos] = e;
        enumerate(exps, pos + 1, budget - e, visit);
    }
    exps[pos] = 0;
}

/// Result of the Ritz minimisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub y: f64,
    pub coupling: String,
    pub basis: String,
    pub basis_functions: Vec<String>,
    /// `y⁻⁴ · min`.
    pub a_hat: f64,
    /// Minimum of `E[a(p₀p₁ + Σ cᵢξᵢ)²]`.
    pub form_value: f64,
    /// Value at `F = 0`.
    pub form_at_zero: f64,
    /// Minimiser coefficients (zero for dropped columns).
    pub coefficients: Vec<f64>,
    /// Coefficients of the local function to subtract in the current
    /// decomposition, twice the minimiser: the functional is evaluated at
    /// `½F` there.
    pub residual_coefficients: Vec<f64>,
    pub dropped: Vec<usize>,
    pub rank: usize,
    pub gram_condition: f64,
}

impl DiffusionReport {
    /// The minimiser `F* = Σ cᵢ Fᵢ`.
    pub fn minimizer(&self, basis: &[LocalFunction]) -> LocalFunction {
        LocalFunction::combine(basis, &self.coefficients)
    }

    /// `2F*`, the function entering the current decomposition.
    pub fn residual_function(&self, basis: &[LocalFunction]) -> LocalFunction {
        LocalFunction::combine(basis, &self.residual_coefficients)
    }
}

/// Relative rank tolerance of the pivoted factorisation.
pub const RANK_TOL: f64 = 1e-12;

/// Greedy diagonal-pivoted Cholesky: indices of a maximal well-conditioned
/// set of columns.
fn pivoted_columns(g: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let n = g.nrows();
    let mut s = g.clone();
    let scale = (0..n).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
    let mut chosen = Vec::new();
    let mut free: Vec<usize> = (0..n).collect();
    while !free.is_empty() {
        let (pos, &j) = free
            .iter()
            .enumerate()
            .max_by(|a, b| s[(*a.1, *a.1)].total_cmp(&s[(*b.1, *b.1)]))
            .unwrap();
        let d = s[(j, j)];
        if !(d > rel_tol * scale) {
            break;
        }
        chosen.push(j);
        free.swap_remove(pos);
        let col: Vec<f64> = (0..n).map(|i| s[(i, j)]).collect();
        for &a in &free {
            for &b in &free {
                s[(a, b)] -= col[a] * col[b] / d;
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Minimises `E[a(p₀p₁ + Σ cᵢ ξᵢ)²]` over `c`, with `ξᵢ` the cyclic
/// gradients of the basis.
pub fn minimize_diffusion_coefficient(
    y: f64,
    basis: &[LocalFunction],
    coupling: &CouplingSpec,
) -> Result<DiffusionReport> {
    minimize_with(y, basis, coupling, &coupling.label(), "custom")
}

pub fn minimize_with(
    y: f64,
    basis: &[LocalFunction],
    coupling: &dyn Coupling,
    coupling_label: &str,
    basis_label: &str,
) -> Result<DiffusionReport> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::InvalidParameter(format!("y must be positive, got {y}")));
    }
    let target = Polynomial::monomial(&[(0, 1), (1, 1)], 1.0);
    let xis: Vec<Polynomial> = basis.iter().map(cyclic_gradient).collect();
    let max_exp = xis
        .iter()
        .map(|x| x.max_exponent())
        .max()
        .unwrap_or(0)
        .max(1) as usize
        * 2;
    let pm = PairMoments::new(coupling, y, max_exp.max(2));
    let n = basis.len();
    let form_at_zero = pm.expect(&(&target * &target), 0, 1)?;

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let entries: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| pm.expect(&(&xis[i] * &xis[j]), 0, 1))
        .collect();
    let mut g = DMatrix::<f64>::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        let v = v?;
        g[(i, j)] = v;
        g[(j, i)] = v;
    }
    let b: Vec<f64> = xis
        .par_iter()
        .map(|x| pm.expect(&(&target * x), 0, 1))
        .collect::<Result<_>>()?;

    let keep = pivoted_columns(&g, RANK_TOL);
    let dropped: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    if !dropped.is_empty() {
        warn!(
            "Gram matrix is rank deficient: dropped {} of {} basis functions",
            dropped.len(),
            n
        );
    }
    let m = keep.len();
    let mut coeffs = vec![0.0; n];
    let mut form = form_at_zero;
    let mut cond = 1.0;
    if m > 0 {
        let gs = DMatrix::from_fn(m, m, |a, c| g[(keep[a], keep[c])]);
        let bs = DVector::from_fn(m, |a, _| b[keep[a]]);
        let eig = gs.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
        cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let chol = gs
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NegativeForm(lo))?;
        let c = -chol.solve(&bs);
        for (a, &idx) in keep.iter().enumerate() {
            coeffs[idx] = c[a];
        }
        // min = E[a p₀²p₁²] + 2cᵀb + cᵀGc = E[a p₀²p₁²] + cᵀb
        form = form_at_zero + c.dot(&bs);
    }
    if form < 0.0 {
        return Err(Error::NegativeForm(form));
    }
    if !form.is_finite() {
        return Err(Error::NonFinite("minimize_diffusion_coefficient"));
    }
    Ok(DiffusionReport {
        y,
        coupling: coupling_label.to_string(),
        basis: basis_label.to_string(),
        basis_functions: basis.iter().map(|f| f.poly.to_string()).collect(),
        a_hat: form / y.powi(4),
        form_value: form,
        form_at_zero,
        residual_coefficients: coeffs.iter().map(|c| 2.0 * c).collect(),
        coefficients: coeffs,
        dropped,
        rank: m,
        gram_condition: cond,
    })
}

/// Builds the default basis for `spec` and minimises.
pub fn diffusion_coefficient(
    y: f64,
    spec: &BasisSpec,
    coupling: &CouplingSpec,
) -> Result<(DiffusionReport, Vec<LocalFunction>)> {
    let basis = default_basis(spec);
    let rep = minimize_with(y, &basis, coupling, &coupling.label(), &spec.label())?;
    Ok((rep, basis))
}

/// Outcome of one membership condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    pub passed: bool,
    /// Largest violation (value or coefficient).
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyReport {
    pub y: f64,
    pub conditions: Vec<ConditionResult>,
}

impl HyReport {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn passed(&self, idx: usize) -> bool {
        self.conditions[idx].passed
    }
}

/// Tolerance for the moment conditions.
pub const HY_TOL: f64 = 1e-10;

/// Checks the four closure conditions for `ξ`:
/// i) `E[ξ] = 0`; ii) `E[p₀p₁ξ] = 0`;
/// iii) `X_{i,i+1}(τ^jξ) = X_{j,j+1}(τ^iξ)` for disjoint bonds;
/// iv) `p_{i+1}[X_{i+1,i+2}(τ^iξ) − X_{i,i+1}(τ^{i+1}ξ)] = p_{i+2}τ^iξ + p_iτ^{i+1}ξ`.
/// The last two are checked symbolically on every index pair of a window
/// wide enough that all other pairs are trivially equal.
pub fn check_hy_conditions(xi: &Polynomial, y: f64) -> HyReport {
    let scale = (&(xi * xi)).gaussian_expectation(y).sqrt().max(f64::MIN_POSITIVE);
    let mut conditions = Vec::with_capacity(4);

    let m1 = xi.gaussian_expectation(y);
    conditions.push(ConditionResult {
        name: "mean-zero".into(),
        passed: m1.abs() <= HY_TOL * scale.max(1.0),
        residual: m1.abs(),
        witness: None,
    });

    let target = Polynomial::monomial(&[(0, 1), (1, 1)], 1.0);
    let m2 = (&target * xi).gaussian_expectation(y);
    conditions.push(ConditionResult {
        name: "orthogonal-to-current".into(),
        passed: m2.abs() <= HY_TOL * (scale * y * y).max(1.0),
        residual: m2.abs(),
        witness: if m2.abs() > HY_TOL * (scale * y * y).max(1.0) {
            Some(format!("E[p0*p1*xi] = {m2:.6e}"))
        } else {
            None
        },
    });

    let tol = 1e-10 * xi.max_abs_coeff().max(1.0);
    let (lo, hi) = xi.site_range().unwrap_or((0, 0));
    let span = hi - lo;
    let window: Vec<i32> = (-(span + 2)..=(span + 2)).collect();

    let mut worst3 = 0.0f64;
    let mut wit3 = None;
    for &i in &window {
        for &j in &window {
            if (j - i).abs() < 2 {
                continue;
            }
            let lhs = xi.shift(j).rotation_field(i, i + 1);
            let rhs = xi.shift(i).rotation_field(j, j + 1);
            let d = (&lhs - &rhs).max_abs_coeff();
            if d > worst3 {
                worst3 = d;
                if d > tol && wit3.is_none() {
                    wit3 = Some(format!("i={i}, j={j}: max coefficient gap {d:.3e}"));
                }
            }
        }
    }
    conditions.push(ConditionResult {
        name: "commuting-disjoint-bonds".into(),
        passed: worst3 <= tol,
        residual: worst3,
        witness: wit3,
    });

    let mut worst4 = 0.0f64;
    let mut wit4 = None;
    for &i in &window {
        let a = xi.shift(i);
        let b = xi.shift(i + 1);
        let inner = &a.rotation_field(i + 1, i + 2) - &b.rotation_field(i, i + 1);
        let lhs = &Polynomial::var(i + 1) * &inner;
        let rhs = &(&Polynomial::var(i + 2) * &a) + &(&Polynomial::var(i) * &b);
        let d = (&lhs - &rhs).max_abs_coeff();
        if d > worst4 {
            worst4 = d;
            if d > tol && wit4.is_none() {
                wit4 = Some(format!("i={i}: max coefficient gap {d:.3e}"));
            }
        }
    }
    conditions.push(ConditionResult {
        name: "adjacent-bond-bracket".into(),
        passed: worst4 <= tol,
        residual: worst4,
        witness: wit4,
    });

    HyReport { y, conditions }
}

/// Observables whose finite-volume CLT variance is available in closed form
/// or by a single sphere integral.
#[derive(Clone, Debug, PartialEq)]
pub enum VarianceTarget {
    /// `B_N` with itself.
    BB,
    /// `H_N^F` with itself.
    HH(LocalFunction),
    /// `B_N` with `H_N^F`.
    BH(LocalFunction),
    /// `A_N` with `B_N`.
    AB,
    /// `A_N` with itself: not a gradient, no closed form.
    AA,
}

/// `U = Σ_x x p_x²` on the open chain `−N..=N`, indexed `0..=2N`.
pub fn weighted_energy(half_n: usize) -> Polynomial {
    let n = half_n as i32;
    let mut u = Polynomial::zero();
    for i in 0..=2 * n {
        u.add_term(Monomial::new([(i, 2)]), (i - n) as f64);
    }
    u
}

/// `ψ^F = Σ τ^x F` over the translates fully inside `−N..=N`, indexed
/// `0..=2N`.
pub fn translate_sum(f: &LocalFunction, half_n: usize) -> Polynomial {
    let n = half_n as i32;
    let k = f.half_width() as i32;
    let mut psi = Polynomial::zero();
    for x in (-n + k)..=(n - k) {
        psi += &f.translate(x + n);
    }
    psi
}

/// `A_N = p_N² − p_{−N}²`.
pub fn boundary_difference(half_n: usize) -> Polynomial {
    let n = 2 * half_n as i32;
    Polynomial::monomial(&[(n, 2)], 1.0) - Polynomial::monomial(&[(0, 2)], 1.0)
}

/// Exact finite-volume CLT (co)variance on the open chain of `2N+1` sites
/// under the uniform measure on the sphere of radius `y√(2N+1)`.
///
/// Non-constant couplings need a Monte Carlo sphere integral; `samples`
/// and `seed` set its budget.
pub fn gradient_type_variance(
    target: &VarianceTarget,
    half_n: usize,
    y: f64,
    coupling: &CouplingSpec,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let n_sites = 2 * half_n + 1;
    let params = ModelParams::open(n_sites, y, *coupling)?;
    let measure = Measure::Microcanonical { samples, seed };
    let r = y * (n_sites as f64).sqrt();
    match target {
        VarianceTarget::BB => Ok(dirichlet_form(&weighted_energy(half_n), &params, measure)?.scale(2.0)),
        VarianceTarget::HH(f) => Ok(dirichlet_form(&translate_sum(f, half_n), &params, measure)?.scale(2.0)),
        VarianceTarget::BH(f) => {
            // polarisation: 2⟨U,ψ⟩₁ = D(U+ψ) − D(U−ψ)
            let u = weighted_energy(half_n);
            let psi = translate_sum(f, half_n);
            let plus = dirichlet_form(&(&u + &psi), &params, measure)?;
            let minus = dirichlet_form(&(&u - &psi), &params, measure)?;
            Ok(Estimate {
                value: plus.value - minus.value,
                stderr: (plus.stderr.powi(2) + minus.stderr.powi(2)).sqrt(),
                samples: plus.samples,
            })
        }
        VarianceTarget::AB => {
            // B = L U, so the covariance is −2⟨A, U⟩
            let prod = &boundary_difference(half_n) * &weighted_energy(half_n);
            let spec = SphereSpec::new(n_sites, r)?;
            Ok(Estimate::exact(
                -2.0 * sphere_polynomial_expectation(&prod, spec.n, spec.radius)?,
            ))
        }
        VarianceTarget::AA => Err(Error::Unsupported(
            "A_N is not in the range of the generator; use the simulated estimator".into(),
        )),
    }
}
