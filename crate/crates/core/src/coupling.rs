//! The bond coupling `a(r, s)` modulating the exchange rate between neighbours.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded, differentiable bond coupling with analytic partial derivatives.
pub trait Coupling: Send + Sync + std::fmt::Debug {
    fn value(&self, r: f64, s: f64) -> f64;
    fn d_r(&self, r: f64, s: f64) -> f64;
    fn d_s(&self, r: f64, s: f64) -> f64;
    /// Certified `c` with `0 < c ≤ a`.
    fn lower_bound(&self) -> f64;
    /// Certified `C` with `a ≤ C`.
    fn upper_bound(&self) -> f64;
    /// Bound on `|∂_r a|` and `|∂_s a|`.
    fn derivative_bound(&self) -> f64;

    /// `Some(a0)` when the coupling is identically `a0`.
    fn constant_value(&self) -> Option<f64> {
        None
    }

    /// True when `a(±r, ±s) = a(r, s)` and `a(r, s) = a(s, r)`.
    fn is_symmetric(&self) -> bool {
        false
    }

    /// `X_{x,x+1} a = s ∂_r a − r ∂_s a`, evaluated at `(r, s) = (p_x, p_{x+1})`.
    fn rotation_derivative(&self, r: f64, s: f64) -> f64 {
        s * self.d_r(r, s) - r * self.d_s(r, s)
    }
}

/// Built-in couplings.
///
/// `Constant` is the gradient model; `GaussianBump` is
/// `a(r,s) = 1 + ε exp(−(r²+s²)/2w²)` with `c = 1` and `C = 1 + ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CouplingSpec {
    Constant { a0: f64 },
    GaussianBump { epsilon: f64, width: f64 },
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec::Constant { a0: 1.0 }
    }
}

impl CouplingSpec {
    pub fn constant(a0: f64) -> Self {
        CouplingSpec::Constant { a0 }
    }

    pub fn gaussian_bump(epsilon: f64, width: f64) -> Self {
        CouplingSpec::GaussianBump { epsilon, width }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CouplingSpec::Constant { a0 } => {
                if !(a0 > 0.0 && a0.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "constant coupling needs a0 > 0, got {a0}"
                    )));
                }
            }
            CouplingSpec::GaussianBump { epsilon, width } => {
                if !(epsilon > 0.0 && epsilon < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian bump needs epsilon in (0,1), got {epsilon}"
                    )));
                }
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian bump needs width > 0, got {width}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match *self {
            CouplingSpec::Constant { a0 } => format!("constant(a0={a0})"),
            CouplingSpec::GaussianBump { epsilon, width } => {
                format!("gaussian-bump(epsilon={epsilon},width={width})")
            }
        }
    }
}

impl Coupling for CouplingSpec {
    fn value(&self, r: f64, s: f64) -> f64 {
        match *self {
            CouplingSpec::Constant { a0 } => a0,
            CouplingSpec::GaussianBump { epsilon, width } => {
                1.0 + epsilon * (-(r * r + s * s) / (2.0 * width * width)).exp()
            }
        }
    }

    fn d_r(&self, r: f64, s: f64) -> f64 {
        match *self {
            CouplingSpec::Constant { .. } => 0.0,
            CouplingSpec::GaussianBump { epsilon, width } => {
                let w2 = width * width;
                -epsilon * r / w2 * (-(r * r + s * s) / (2.0 * w2)).exp()
            }
        }
    }

    fn d_s(&self, r: f64, s: f64) -> f64 {
        self.d_r(s, r)
    }

    fn lower_bound(&self) -> f64 {
        match *self {
            CouplingSpec::Constant { a0 } => a0,
            CouplingSpec::GaussianBump { .. } => 1.0,
        }
    }

    fn upper_bound(&self) -> f64 {
        match *self {
            CouplingSpec::Constant { a0 } => a0,
            CouplingSpec::GaussianBump { epsilon, .. } => 1.0 + epsilon,
        }
    }

    fn derivative_bound(&self) -> f64 {
        match *self {
            CouplingSpec::Constant { .. } => 0.0,
            // max_r |r| e^{-r²/2w²} / w² = e^{-1/2} / w
            CouplingSpec::GaussianBump { epsilon, width } => epsilon * (-0.5f64).exp() / width,
        }
    }

    fn constant_value(&self) -> Option<f64> {
        match *self {
            CouplingSpec::Constant { a0 } => Some(a0),
            _ => None,
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(a: &dyn Coupling, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let r: f64 = rng.random_range(-3.0..3.0);
            let s: f64 = rng.random_range(-3.0..3.0);
            let h = 1e-5;
            let fr = (a.value(r + h, s) - a.value(r - h, s)) / (2.0 * h);
            let fs = (a.value(r, s + h) - a.value(r, s - h)) / (2.0 * h);
            let scale = a.d_r(r, s).abs().max(a.d_s(r, s).abs()).max(1e-3);
            assert!((fr - a.d_r(r, s)).abs() <= 1e-6 * scale, "d_r at ({r},{s})");
            assert!((fs - a.d_s(r, s)).abs() <= 1e-6 * scale, "d_s at ({r},{s})");
            let v = a.value(r, s);
            assert!(v >= a.lower_bound() && v <= a.upper_bound());
            assert!(a.d_r(r, s).abs() <= a.derivative_bound() + 1e-15);
        }
    }

    #[test]
    fn partials_match_finite_differences() {
        fd_check(&CouplingSpec::gaussian_bump(0.5, 1.0), 1);
        fd_check(&CouplingSpec::gaussian_bump(0.9, 0.3), 2);
        fd_check(&CouplingSpec::constant(2.0), 3);
    }

    #[test]
    fn bump_is_radial_so_rotation_derivative_vanishes() {
        let a = CouplingSpec::gaussian_bump(0.5, 1.0);
        assert!(a.rotation_derivative(0.3, -1.7).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(CouplingSpec::constant(0.0).validate().is_err());
        assert!(CouplingSpec::gaussian_bump(1.2, 1.0).validate().is_err());
        assert!(CouplingSpec::gaussian_bump(0.5, -1.0).validate().is_err());
        assert!(CouplingSpec::gaussian_bump(0.5, 1.0).validate().is_ok());
    }
}
