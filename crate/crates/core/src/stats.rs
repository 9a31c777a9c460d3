//! Weighted moment estimators with standard errors.
//!
//! Weights are self-normalized. Standard errors use the delta method for
//! self-normalized importance sampling with an `ESS / (ESS - 1)` small-sample
//! factor, so that equal weights give the usual unweighted formulas exactly
//! (sample variance with `n - 1`, standard error `s / sqrt(n)`).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_effective: f64,
}

/// Normalized weights `w_i / sum w` from log weights.
pub fn normalized_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if log_w.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::InvalidParameter("log weights must contain a finite maximum".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// `(sum w)^2 / sum w^2`.
pub fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

struct Prepared {
    w: Vec<f64>,
    ess: f64,
    /// `ESS / (ESS - 1)`, 0 for a single effective sample.
    factor: f64,
}

fn prepare(n: usize, weights: Option<&[f64]>) -> Result<Prepared> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidParameter("weights and samples differ in length".into()));
            }
            let s: f64 = w.iter().sum();
            if !(s > 0.0) || w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::InvalidParameter("weights must be nonnegative with positive sum".into()));
            }
            w.iter().map(|x| x / s).collect()
        }
        None => vec![1.0 / n as f64; n],
    };
    let e = if weights.is_some() { ess(&w) } else { n as f64 };
    let factor = if e > 1.0 { e / (e - 1.0) } else { 0.0 };
    Ok(Prepared { w, ess: e, factor })
}

fn influence_se(p: &Prepared, psi: impl Iterator<Item = f64>) -> f64 {
    (p.w.iter().zip(psi).map(|(w, s)| w * w * s * s).sum::<f64>() * p.factor).sqrt()
}

pub fn mean(x: &[f64], weights: Option<&[f64]>) -> Result<Estimate> {
    let p = prepare(x.len(), weights)?;
    let mu: f64 = p.w.iter().zip(x).map(|(w, x)| w * x).sum();
    let se = influence_se(&p, x.iter().map(|x| x - mu));
    Ok(Estimate { estimate: mu, stderr: se, n_effective: p.ess })
}

pub fn variance(x: &[f64], weights: Option<&[f64]>) -> Result<Estimate> {
    covariance(x, x, weights)
}

pub fn covariance(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<Estimate> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("covariance inputs differ in length".into()));
    }
    let p = prepare(x.len(), weights)?;
    let mx: f64 = p.w.iter().zip(x).map(|(w, v)| w * v).sum();
    let my: f64 = p.w.iter().zip(y).map(|(w, v)| w * v).sum();
    let c: f64 = p.w.iter().zip(x.iter().zip(y)).map(|(w, (a, b))| w * (a - mx) * (b - my)).sum();
    let se = influence_se(&p, x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my) - c));
    Ok(Estimate { estimate: c * p.factor, stderr: se, n_effective: p.ess })
}

/// Bin probabilities for fixed `edges` (bins are `[e_k, e_{k+1})`).
pub fn histogram(x: &[f64], weights: Option<&[f64]>, edges: &[f64]) -> Result<Vec<Estimate>> {
    if edges.len() < 2 || edges.windows(2).any(|e| !(e[0] < e[1])) {
        return Err(Error::InvalidParameter("histogram edges must be increasing".into()));
    }
    let p = prepare(x.len(), weights)?;
    Ok(edges
        .windows(2)
        .map(|e| {
            let inside = |v: f64| if v >= e[0] && v < e[1] { 1.0 } else { 0.0 };
            let prob: f64 = p.w.iter().zip(x).map(|(w, &v)| w * inside(v)).sum();
            let se = influence_se(&p, x.iter().map(|&v| inside(v) - prob));
            Estimate { estimate: prob, stderr: se, n_effective: p.ess }
        })
        .collect())
}

/// `sup_x |F_w(x) - cdf(x)|` for the weighted empirical distribution.
pub fn ks_statistic(x: &[f64], weights: Option<&[f64]>, cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let p = prepare(x.len(), weights)?;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut acc = 0.0;
    let mut d = 0.0f64;
    let mut k = 0;
    while k < order.len() {
        let v = x[order[k]];
        let f = cdf(v);
        d = d.max((f - acc).abs());
        while k < order.len() && x[order[k]] == v {
            acc += p.w[order[k]];
            k += 1;
        }
        d = d.max((acc - f).abs());
    }
    Ok(d)
}

/// Asymptotic Kolmogorov critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(alpha: f64, n_effective: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / n_effective.sqrt()
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
}

/// Least-squares line through `(xs[i], ys[i].estimate)` evaluated at 0,
/// with the standard error propagated from the independent inputs.
/// `None` for fewer than two distinct abscissae.
pub fn linear_extrapolation(xs: &[f64], ys: &[Estimate]) -> Option<Estimate> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let xbar = xs.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let coef: Vec<f64> = xs.iter().map(|x| 1.0 / n as f64 - xbar * (x - xbar) / sxx).collect();
    let estimate = coef.iter().zip(ys).map(|(c, y)| c * y.estimate).sum();
    let stderr = coef.iter().zip(ys).map(|(c, y)| (c * y.stderr).powi(2)).sum::<f64>().sqrt();
    let n_effective = ys.iter().map(|y| y.n_effective).fold(f64::INFINITY, f64::min);
    Some(Estimate { estimate, stderr, n_effective })
}
