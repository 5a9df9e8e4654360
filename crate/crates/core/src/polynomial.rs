//! Sparse multivariate polynomials over lattice sites.
//!
//! Sites are signed integers so that local functions can be written around
//! the origin (`p_{-k} .. p_k`) and translated freely. Evaluating against a
//! concrete configuration maps each site to a value through a closure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// A product `Π p_s^{e_s}` stored as sorted `(site, exponent)` pairs with
/// positive exponents.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(i32, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn new(factors: impl IntoIterator<Item = (i32, u32)>) -> Self {
        let mut map: BTreeMap<i32, u32> = BTreeMap::new();
        for (s, e) in factors {
            if e > 0 {
                *map.entry(s).or_insert(0) += e;
            }
        }
        Monomial(map.into_iter().collect())
    }

    pub fn var(site: i32) -> Self {
        Monomial(vec![(site, 1)])
    }

    pub fn factors(&self) -> &[(i32, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent(&self, site: i32) -> u32 {
        match self.0.binary_search_by_key(&site, |&(s, _)| s) {
            Ok(i) => self.0[i].1,
            Err(_) => 0,
        }
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = (self.0[i], other.0[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    out.push(a);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a.0, a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    pub fn shift(&self, by: i32) -> Monomial {
        Monomial(self.0.iter().map(|&(s, e)| (s + by, e)).collect())
    }

    /// `∂/∂p_site` as `(multiplicity, reduced monomial)`.
    pub fn derivative(&self, site: i32) -> Option<(u32, Monomial)> {
        let idx = self.0.binary_search_by_key(&site, |&(s, _)| s).ok()?;
        let e = self.0[idx].1;
        let mut f = self.0.clone();
        if e == 1 {
            f.remove(idx);
        } else {
            f[idx].1 = e - 1;
        }
        Some((e, Monomial(f)))
    }

    pub fn min_site(&self) -> Option<i32> {
        self.0.first().map(|&(s, _)| s)
    }

    pub fn max_site(&self) -> Option<i32> {
        self.0.last().map(|&(s, _)| s)
    }

    pub fn eval(&self, value: &impl Fn(i32) -> f64) -> f64 {
        self.0
            .iter()
            .fold(1.0, |acc, &(s, e)| acc * value(s).powi(e as i32))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|&(s, e)| {
                if e == 1 {
                    format!("p[{s}]")
                } else {
                    format!("p[{s}]^{e}")
                }
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// Sparse polynomial with real coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(site: i32) -> Self {
        Self::monomial(&[(site, 1)], 1.0)
    }

    pub fn monomial(factors: &[(i32, u32)], coeff: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::new(factors.iter().copied()), coeff);
        p
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn sites(&self) -> BTreeSet<i32> {
        self.terms
            .keys()
            .flat_map(|m| m.factors().iter().map(|&(s, _)| s))
            .collect()
    }

    /// Inclusive range of sites touched, `None` for constants.
    pub fn site_range(&self) -> Option<(i32, i32)> {
        let sites = self.sites();
        Some((*sites.first()?, *sites.last()?))
    }

    pub fn max_exponent(&self) -> u32 {
        self.terms
            .keys()
            .flat_map(|m| m.factors().iter().map(|&(_, e)| e))
            .max()
            .unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn scale(&self, k: f64) -> Polynomial {
        if k == 0.0 {
            return Polynomial::zero();
        }
        Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect(),
        }
    }

    pub fn partial(&self, site: i32) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in self.terms() {
            if let Some((e, reduced)) = m.derivative(site) {
                out.add_term(reduced, c * e as f64);
            }
        }
        out
    }

    /// `X_{i,j} f = p_j ∂f/∂p_i − p_i ∂f/∂p_j`.
    pub fn rotation_field(&self, i: i32, j: i32) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in self.terms() {
            if let Some((e, reduced)) = m.derivative(i) {
                out.add_term(reduced.mul(&Monomial::var(j)), c * e as f64);
            }
            if let Some((e, reduced)) = m.derivative(j) {
                out.add_term(reduced.mul(&Monomial::var(i)), -c * e as f64);
            }
        }
        out
    }

    /// Translation `τ^by`: site `s` becomes `s + by`.
    pub fn shift(&self, by: i32) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().map(|(m, &c)| (m.shift(by), c)).collect(),
        }
    }

    /// Relabels sites; monomials that collide are merged.
    pub fn map_sites(&self, f: impl Fn(i32) -> i32) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in self.terms() {
            out.add_term(Monomial::new(m.factors().iter().map(|&(s, e)| (f(s), e))), c);
        }
        out
    }

    /// Folds sites onto a ring of `n` sites (`s mod n`).
    pub fn wrap(&self, n: usize) -> Polynomial {
        let n = n as i32;
        self.map_sites(|s| s.rem_euclid(n))
    }

    pub fn eval(&self, value: impl Fn(i32) -> f64) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(&value)).sum()
    }

    /// Evaluates with sites read as array indices.
    pub fn eval_slice(&self, p: &[f64]) -> f64 {
        self.eval(|s| p[s as usize])
    }

    /// Exact expectation under i.i.d. centred Gaussians of standard deviation `y`.
    pub fn gaussian_expectation(&self, y: f64) -> f64 {
        self.terms()
            .map(|(m, c)| {
                c * m
                    .factors()
                    .iter()
                    .map(|&(_, e)| gaussian_moment(e, y))
                    .product::<f64>()
            })
            .sum()
    }

    /// Integrates out every site not in `keep` under the Gaussian product
    /// measure, leaving a polynomial in the kept sites.
    pub fn integrate_out(&self, keep: &[i32], y: f64) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in self.terms() {
            let mut k = c;
            let mut kept = Vec::new();
            for &(s, e) in m.factors() {
                if keep.contains(&s) {
                    kept.push((s, e));
                } else {
                    k *= gaussian_moment(e, y);
                    if k == 0.0 {
                        break;
                    }
                }
            }
            if k != 0.0 {
                out.add_term(Monomial(kept), k);
            }
        }
        out
    }

    /// Removes coefficients with `|c| ≤ tol`.
    pub fn prune(&self, tol: f64) -> Polynomial {
        Polynomial {
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > tol)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Coefficient-wise comparison with absolute tolerance `tol`.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        (self - other).max_abs_coeff() <= tol
    }

    /// True when every monomial has an even exponent at every site.
    pub fn is_even_per_site(&self) -> bool {
        self.terms
            .keys()
            .all(|m| m.factors().iter().all(|&(_, e)| e % 2 == 0))
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.terms().map(|(m, c)| format!("{c}*{m}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// `E[X^e]` for `X ~ N(0, y²)`: `(e−1)!! y^e` for even `e`, zero otherwise.
pub fn gaussian_moment(e: u32, y: f64) -> f64 {
    if e % 2 == 1 {
        return 0.0;
    }
    let mut df = 1.0;
    let mut k = e as i64 - 1;
    while k > 1 {
        df *= k as f64;
        k -= 2;
    }
    df * y.powi(e as i32)
}

impl Add<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(mut self, rhs: Polynomial) -> Polynomial {
        self += &rhs;
        self
    }
}

impl AddAssign<&Polynomial> for Polynomial {
    fn add_assign(&mut self, rhs: &Polynomial) {
        for (m, c) in rhs.terms() {
            self.add_term(m.clone(), c);
        }
    }
}

impl Sub<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in rhs.terms() {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        &self - &rhs
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ma, ca) in self.terms() {
            for (mb, cb) in rhs.terms() {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

impl Mul<f64> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, k: f64) -> Polynomial {
        self.scale(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: i32) -> Polynomial {
        Polynomial::var(s)
    }

    #[test]
    fn monomial_merge_and_derivative() {
        let m = Monomial::new([(1, 2), (0, 1), (1, 1)]);
        assert_eq!(m.factors(), &[(0, 1), (1, 3)]);
        assert_eq!(m.degree(), 4);
        let (e, r) = m.derivative(1).unwrap();
        assert_eq!(e, 3);
        assert_eq!(r.factors(), &[(0, 1), (1, 2)]);
        assert!(m.derivative(5).is_none());
    }

    #[test]
    fn cancellation_removes_terms() {
        let a = &p(0) * &p(1);
        let z = &a - &a;
        assert!(z.is_zero());
    }

    #[test]
    fn rotation_field_of_product() {
        // X_{0,1}(p0 p1) = p1^2 - p0^2
        let f = &p(0) * &p(1);
        let xf = f.rotation_field(0, 1);
        let expected = &p(1).pow(2) - &p(0).pow(2);
        assert!(xf.approx_eq(&expected, 0.0));
    }

    #[test]
    fn rotation_kills_radial() {
        let r = &p(0).pow(2) + &p(1).pow(2);
        assert!(r.rotation_field(0, 1).is_zero());
        assert!(r.pow(3).rotation_field(0, 1).is_zero());
    }

    #[test]
    fn gaussian_moments() {
        assert_eq!(gaussian_moment(0, 2.0), 1.0);
        assert_eq!(gaussian_moment(3, 2.0), 0.0);
        assert_eq!(gaussian_moment(2, 2.0), 4.0);
        assert_eq!(gaussian_moment(4, 2.0), 48.0);
        assert_eq!(gaussian_moment(6, 1.0), 15.0);
        let g = &p(0).pow(2) * &p(1).pow(2);
        assert_eq!(g.gaussian_expectation(1.0), 1.0);
    }

    #[test]
    fn integrate_out_keeps_named_sites() {
        let f = &(&p(0).pow(2) * &p(3).pow(2)) + &(&p(0) * &p(2));
        let g = f.integrate_out(&[0], 2.0);
        assert!(g.approx_eq(&p(0).pow(2).scale(4.0), 1e-15));
    }

    #[test]
    fn wrap_merges_sites() {
        let f = &p(-1) * &p(3);
        assert!(f.wrap(4).approx_eq(&p(3).pow(2), 0.0));
    }

    #[test]
    fn shift_and_eval() {
        let f = &p(0) * &p(1).pow(2);
        let g = f.shift(2);
        let v = [0.0, 0.0, 3.0, 2.0];
        assert_eq!(g.eval_slice(&v), 12.0);
    }
}
