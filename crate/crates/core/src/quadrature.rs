//! Gauss–Hermite quadrature for expectations under the Gaussian product
//! measure, plus a factorised evaluator for `E[a(p_r, p_s) · P(p)]` with `P`
//! polynomial.

use nalgebra::DMatrix;

use crate::coupling::Coupling;
use crate::error::{Error, Result};
use crate::polynomial::{gaussian_moment, Polynomial};

/// Default per-dimension order.
pub const DEFAULT_ORDER: usize = 12;

/// Guards against accidental high-dimensional tensor grids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureLimits {
    pub max_dims: usize,
    pub max_nodes: usize,
}

impl Default for QuadratureLimits {
    fn default() -> Self {
        QuadratureLimits {
            max_dims: 6,
            max_nodes: 50_000_000,
        }
    }
}

/// Nodes and weights for `E[f(X)]`, `X ~ N(0,1)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials. Exact for polynomials of degree `≤ 2·order − 1`.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut jac = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = jac.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrise to remove the eigensolver's sign noise
        let n = pairs.len();
        for i in 0..n / 2 {
            let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Tensor-product Gauss–Hermite value of `E[g(p_1..p_dims)]` with i.i.d.
/// `N(0, y²)` coordinates.
pub fn gaussian_expectation(
    g: impl Fn(&[f64]) -> f64,
    dims: usize,
    y: f64,
    order: usize,
    limits: QuadratureLimits,
) -> Result<f64> {
    let nodes_total = (order as f64).powi(dims as i32);
    if dims > limits.max_dims || nodes_total > limits.max_nodes as f64 {
        return Err(Error::QuadratureBudget {
            dims,
            order,
            max_dims: limits.max_dims,
            max_nodes: limits.max_nodes,
        });
    }
    let gh = GaussHermite::new(order);
    let mut idx = vec![0usize; dims];
    let mut x = vec![0.0; dims];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for d in 0..dims {
            x[d] = y * gh.nodes[idx[d]];
            w *= gh.weights[idx[d]];
        }
        total += w * g(&x);
        let mut d = 0;
        loop {
            if d == dims {
                return if total.is_finite() {
                    Ok(total)
                } else {
                    Err(Error::NonFinite("gaussian_expectation"))
                };
            }
            idx[d] += 1;
            if idx[d] < order {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Table of `E[a(p_r, p_s) p_r^i p_s^j]` under `N(0, y²) ⊗ N(0, y²)`.
///
/// Since the Gaussian product measure factorises, any expectation
/// `E[a(p_r, p_s) P(p)]` with polynomial `P` reduces to a linear combination
/// of these entries times one-dimensional Gaussian moments of the remaining
/// sites.
#[derive(Clone, Debug)]
pub struct PairMoments {
    y: f64,
    max_exp: usize,
    table: Vec<f64>,
}

impl PairMoments {
    /// Quadrature order used for non-constant couplings.
    pub const ORDER: usize = 80;

    pub fn new(coupling: &dyn Coupling, y: f64, max_exp: usize) -> Self {
        Self::with_order(coupling, y, max_exp, Self::ORDER)
    }

    pub fn with_order(coupling: &dyn Coupling, y: f64, max_exp: usize, order: usize) -> Self {
        let dim = max_exp + 1;
        let mut table = vec![0.0; dim * dim];
        if let Some(a0) = coupling.constant_value() {
            for i in 0..dim {
                for j in 0..dim {
                    table[i * dim + j] =
                        a0 * gaussian_moment(i as u32, y) * gaussian_moment(j as u32, y);
                }
            }
        } else {
            let gh = GaussHermite::new(order.max(max_exp + 2));
            for (u, wu) in gh.nodes.iter().zip(&gh.weights) {
                let r = y * u;
                for (v, wv) in gh.nodes.iter().zip(&gh.weights) {
                    let s = y * v;
                    let base = wu * wv * coupling.value(r, s);
                    let mut ri = 1.0;
                    for i in 0..dim {
                        let mut sj = 1.0;
                        for j in 0..dim {
                            table[i * dim + j] += base * ri * sj;
                            sj *= s;
                        }
                        ri *= r;
                    }
                }
            }
            // parity: odd moments vanish when a is even in each slot
            if coupling.is_symmetric() {
                for i in 0..dim {
                    for j in 0..dim {
                        if i % 2 == 1 || j % 2 == 1 {
                            table[i * dim + j] = 0.0;
                        }
                    }
                }
            }
        }
        PairMoments { y, max_exp, table }
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn max_exp(&self) -> usize {
        self.max_exp
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.table[i * (self.max_exp + 1) + j]
    }

    /// `E[a(p_r, p_s) · poly]` under the Gaussian product measure.
    pub fn expect(&self, poly: &Polynomial, r: i32, s: i32) -> Result<f64> {
        let mut total = 0.0;
        for (m, c) in poly.terms() {
            let mut er = 0usize;
            let mut es = 0usize;
            let mut k = c;
            for &(site, e) in m.factors() {
                if site == r {
                    er = e as usize;
                } else if site == s {
                    es = e as usize;
                } else {
                    k *= gaussian_moment(e, self.y);
                }
            }
            if k == 0.0 {
                continue;
            }
            if er > self.max_exp || es > self.max_exp {
                return Err(Error::InvalidParameter(format!(
                    "pair moment table holds exponents up to {}, need ({er},{es})",
                    self.max_exp
                )));
            }
            total += k * self.get(er, es);
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFinite("PairMoments::expect"))
        }
    }
}
