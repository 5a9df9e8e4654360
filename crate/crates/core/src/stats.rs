//! Estimators with error bars: replica means, paired differences, weighted
//! regression, and autocorrelation times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            samples: 0,
        }
    }

    /// Sample mean and its standard error.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                value: f64::NAN,
                stderr: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate {
            value: mean,
            stderr,
            samples: n,
        }
    }

    /// Deviation from `target` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.stderr
    }

    pub fn scale(&self, k: f64) -> Estimate {
        Estimate {
            value: self.value * k,
            stderr: self.stderr * k.abs(),
            samples: self.samples,
        }
    }
}

/// Streaming mean/variance (Welford) that merges associatively.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            f64::NAN
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            value: self.mean,
            stderr: (self.variance() / self.n as f64).sqrt(),
            samples: self.n as usize,
        }
    }
}

/// A lag- or time-indexed series of replica estimates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatSeries {
    pub grid: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub replicas: usize,
    pub seeds: Vec<u64>,
}

impl StatSeries {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn push(&mut self, t: f64, e: Estimate) {
        self.grid.push(t);
        self.estimates.push(e.value);
        self.stderrs.push(e.stderr);
    }

    pub fn get(&self, i: usize) -> Estimate {
        Estimate {
            value: self.estimates[i],
            stderr: self.stderrs[i],
            samples: self.replicas,
        }
    }

    /// Builds a series from per-replica rows (`rows[replica][grid point]`).
    pub fn from_replicas(grid: Vec<f64>, rows: &[Vec<f64>], seeds: Vec<u64>) -> Self {
        let mut s = StatSeries {
            grid: Vec::with_capacity(grid.len()),
            replicas: rows.len(),
            seeds,
            ..Default::default()
        };
        let mut column = Vec::with_capacity(rows.len());
        for (i, &t) in grid.iter().enumerate() {
            column.clear();
            column.extend(rows.iter().map(|r| r[i]));
            s.push(t, Estimate::from_samples(&column));
        }
        s
    }
}

/// Result of a least-squares line fit `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

/// Weighted least squares. With `weights = None` the residual scatter sets
/// the error bars; with weights `1/σ²` the errors are propagated directly.
pub fn fit_line(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidParameter(
            "line fit needs at least two points".into(),
        ));
    }
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (x - xm) * (y - ym))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let (slope_var, int_var) = if weights.is_some() {
        (1.0 / sxx, 1.0 / sw + xm * xm / sxx)
    } else if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let s2 = rss / (n - 2) as f64;
        (s2 / sxx, s2 * (1.0 / n as f64 + xm * xm / sxx))
    } else {
        (0.0, 0.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr: slope_var.sqrt(),
        intercept_stderr: int_var.sqrt(),
    })
}

/// Normalised autocorrelation `ρ(k)` for `k = 0..=max_lag`, pooled over
/// several equally spaced series (means removed per series).
pub fn autocorrelation(series: &[Vec<f64>], max_lag: usize) -> Vec<f64> {
    let mut cov = vec![0.0; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];
    for s in series {
        let n = s.len();
        if n == 0 {
            continue;
        }
        let mean = s.iter().sum::<f64>() / n as f64;
        let d: Vec<f64> = s.iter().map(|x| x - mean).collect();
        for k in 0..=max_lag.min(n - 1) {
            let mut acc = 0.0;
            for i in 0..n - k {
                acc += d[i] * d[i + k];
            }
            cov[k] += acc;
            counts[k] += n - k;
        }
    }
    let c0 = cov[0] / counts[0].max(1) as f64;
    cov.iter()
        .zip(&counts)
        .map(|(c, &m)| if m > 0 { c / m as f64 / c0 } else { 0.0 })
        .collect()
}

/// Integrated autocorrelation time (in samples) with Sokal's automatic
/// window: the smallest `W` with `W ≥ c·τ(W)`, where
/// `τ(W) = ½ + Σ_{k=1}^{W} ρ(k)`.
///
/// The returned value is normalised so that a pure exponential
/// `ρ(k) = e^{−k/τ}` with `τ ≫ 1` gives approximately `τ`.
pub fn integrated_autocorrelation_time(rho: &[f64], c: f64) -> Result<(f64, usize)> {
    let mut tau = 0.5;
    for (w, r) in rho.iter().enumerate().skip(1) {
        tau += r;
        if w as f64 >= c * tau {
            return Ok((tau, w));
        }
    }
    Err(Error::Unresolved {
        window: rho.len(),
        len: rho.len(),
    })
}

/// Exponential tail fit on `ρ(k)` over lags where `ρ` lies in `[lo, hi]`;
/// returns the decay time in samples.
pub fn exponential_tail_time(rho: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &r) in rho.iter().enumerate().skip(1) {
        if r < lo {
            break;
        }
        if r <= hi {
            xs.push(k as f64);
            ys.push(r.ln());
        }
    }
    let fit = fit_line(&xs, &ys, None)?;
    if fit.slope >= 0.0 {
        return Err(Error::Unresolved {
            window: rho.len(),
            len: rho.len(),
        });
    }
    Ok(-1.0 / fit.slope)
}
