//! Model parameters for the open ASEP, boundary density dictionaries, the
//! weak-asymmetry scaling, and q-calculus helpers.
//!
//! The bulk right-hop rate `p` is fixed to 1 throughout; `q` is the left-hop
//! rate. Boundary rates are `alpha` (create at site 1), `gamma` (annihilate at
//! site 1), `delta` (create at site ell) and `beta` (annihilate at site ell).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for Liggett detection and density round trips.
pub const LIGGETT_TOL: f64 = 1e-12;

/// `[n]_q = (1 - q^n) / (1 - q)`, equal to 1 for every `n >= 1` when `q = 0`.
pub fn q_int(n: u32, q: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if q == 0.0 {
        return 1.0;
    }
    // 1 - q^n computed without cancellation for q close to 1
    -(f64::from(n) * q.ln()).exp_m1() / (1.0 - q)
}

/// `(a; q)_k = (1 - a)(1 - a q) ... (1 - a q^{k-1})`; the empty product is 1.
pub fn q_pochhammer(a: f64, q: f64, k: u32) -> f64 {
    let mut acc = 1.0;
    let mut aq = a;
    for _ in 0..k {
        acc *= 1.0 - aq;
        aq *= q;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub liggett: bool,
    pub ell: usize,
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q must lie in [0,1), got {q}")));
    }
    Ok(())
}

fn check_density(name: &str, rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("{name} must lie in [0,1], got {rho}")));
    }
    Ok(())
}

/// Solves `inj / rho - ej / (1 - rho) = kappa` for `rho` in `[0, 1]`.
fn boundary_density(inj: f64, ej: f64, kappa: f64, side: &'static str) -> Result<f64> {
    if inj <= 0.0 {
        return Err(Error::NoDensityRoot { side });
    }
    if ej == 0.0 {
        let rho = inj / kappa;
        return if rho <= 1.0 + LIGGETT_TOL {
            Ok(rho.min(1.0))
        } else {
            Err(Error::NoDensityRoot { side })
        };
    }
    // kappa rho^2 - (kappa + inj + ej) rho + inj = 0
    let b = kappa + inj + ej;
    let disc = b * b - 4.0 * kappa * inj;
    if disc < 0.0 {
        return Err(Error::NoDensityRoot { side });
    }
    let sq = disc.sqrt();
    let small = 2.0 * inj / (b + sq);
    let large = (b + sq) / (2.0 * kappa);
    let ok = |r: f64| (0.0..=1.0).contains(&r);
    match (ok(small), ok(large)) {
        (true, false) => Ok(small),
        (false, true) => Ok(large),
        (true, true) if (small - large).abs() <= LIGGETT_TOL => Ok(small),
        (true, true) => Err(Error::AmbiguousDensity { side }),
        (false, false) => Err(Error::NoDensityRoot { side }),
    }
}

impl ModelParams {
    /// Liggett-condition rates for reservoir densities `rho_a`, `rho_b`.
    pub fn from_densities(rho_a: f64, rho_b: f64, q: f64) -> Result<Self> {
        check_q(q)?;
        check_density("rho_a", rho_a)?;
        check_density("rho_b", rho_b)?;
        Ok(Self {
            q,
            alpha: rho_a,
            gamma: q * (1.0 - rho_a),
            delta: q * rho_b,
            beta: 1.0 - rho_b,
            rho_a,
            rho_b,
            liggett: true,
            ell: 1,
        })
    }

    /// General boundary rates; the densities solve the boundary current relations.
    pub fn from_rates(alpha: f64, beta: f64, gamma: f64, delta: f64, q: f64) -> Result<Self> {
        check_q(q)?;
        for (name, r) in [("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta", delta)] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be a nonnegative rate, got {r}")));
            }
        }
        let kappa = 1.0 - q;
        let rho_a = boundary_density(alpha, gamma, kappa, "left")?;
        // beta / (1 - rho_b) - delta / rho_b = kappa is the same relation in 1 - rho_b
        let rho_b = 1.0 - boundary_density(beta, delta, kappa, "right")?;
        let liggett = if q > 0.0 {
            (alpha + gamma / q - 1.0).abs() <= LIGGETT_TOL && (beta + delta / q - 1.0).abs() <= LIGGETT_TOL
        } else {
            gamma.abs() <= LIGGETT_TOL && delta.abs() <= LIGGETT_TOL
        };
        Ok(Self { q, alpha, beta, gamma, delta, rho_a, rho_b, liggett, ell: 1 })
    }

    pub fn with_ell(mut self, ell: usize) -> Self {
        self.ell = ell;
        self
    }

    /// Rejects parameter sets for which `<W|V>` diverges.
    pub fn check_normalizable(&self) -> Result<()> {
        if self.rho_b < self.rho_a {
            Ok(())
        } else {
            Err(Error::NotNormalizable { rho_a: self.rho_a, rho_b: self.rho_b })
        }
    }

    /// Residuals of the two boundary current relations.
    pub fn density_residuals(&self) -> (f64, f64) {
        let kappa = 1.0 - self.q;
        let left = self.alpha / self.rho_a - self.gamma / (1.0 - self.rho_a) - kappa;
        let right = self.beta / (1.0 - self.rho_b) - self.delta / self.rho_b - kappa;
        (left, right)
    }
}

/// Weakly asymmetric scaling: `q = exp(-epsilon)`, `ell = round(4 L / epsilon^2)`,
/// `rho_a = 1/2 + u epsilon / 4`, `rho_b = 1/2 - v epsilon / 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub epsilon: f64,
    pub length: f64,
    pub u: f64,
    pub v: f64,
    pub q: f64,
    pub ell: usize,
    pub rho_a: f64,
    pub rho_b: f64,
}

impl ScalingParams {
    /// Lattice spacing in continuum units, `L / ell` (equal to `epsilon^2 / 4` when
    /// `4 L / epsilon^2` is an integer).
    pub fn spacing(&self) -> f64 {
        self.length / self.ell as f64
    }
}

pub fn weak_asymmetry(epsilon: f64, length: f64, u: f64, v: f64) -> Result<(ScalingParams, ModelParams)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter(format!("L must be positive, got {length}")));
    }
    if !(u + v > 0.0) {
        return Err(Error::InvalidParameter("u+v must be positive".into()));
    }
    let rho_a = 0.5 + u * epsilon / 4.0;
    let rho_b = 0.5 - v * epsilon / 4.0;
    for (name, r) in [("rho_a", rho_a), ("rho_b", rho_b)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon={epsilon} too large: {name}={r} outside (0,1)"
            )));
        }
    }
    let ell = (4.0 * length / (epsilon * epsilon)).round();
    if ell < 1.0 {
        return Err(Error::InvalidParameter(format!("epsilon={epsilon} gives fewer than one site")));
    }
    let ell = ell as usize;
    let q = (-epsilon).exp();
    let scaling = ScalingParams { epsilon, length, u, v, q, ell, rho_a, rho_b };
    let model = ModelParams::from_densities(rho_a, rho_b, q)?.with_ell(ell);
    Ok((scaling, model))
}

/// Parsed `key=value` parameter file. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamFile {
    values: BTreeMap<String, f64>,
}

impl ParamFile {
    pub const KEYS: [&'static str; 12] =
        ["q", "alpha", "beta", "gamma", "delta", "rho_a", "rho_b", "ell", "epsilon", "L", "u", "v"];

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if !Self::KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {}: `{}` is not a number", lineno + 1, value.trim())))?;
            values.insert(key.to_string(), value);
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}
