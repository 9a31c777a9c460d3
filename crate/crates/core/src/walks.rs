//! Exact sampling of the weighted positive walks behind the stationary
//! measure, and of the configurations and height increments they encode.
//!
//! A walk `n_0..n_ell` with `n_i >= 1`, `|n_i - n_{i-1}| <= 1` carries the weight
//!
//! ```text
//! Omega(n) = r_a^{n_0} r_b^{n_ell} prod_i v(n_{i-1}, n_i) prod_i [n_i]_q,
//! r_a = (1 - rho_a) / rho_a,  r_b = rho_b / (1 - rho_b),
//! ```
//!
//! with `v = 2` for a flat step and `1` for a unit step. Backward partition
//! sums `R[i][n]` over the remaining steps make forward sampling exact; each
//! `R[i][n]` already includes the factor `[n]_q` of its own site, so every
//! factor of `Omega` is counted once.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mpa::build_representation;
use crate::numerics::log_sum_exp;
use crate::params::{q_int, ModelParams, ScalingParams};
use crate::path::{interpolate, Grid, PathSample};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Walk {
    pub n: Vec<u32>,
}

impl Walk {
    pub fn new(n: Vec<u32>) -> Result<Self> {
        let w = Self { n };
        if w.is_valid() {
            Ok(w)
        } else {
            Err(Error::InvalidParameter("walk must stay positive with steps in {-1,0,1}".into()))
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.n.is_empty() && self.n.iter().all(|&x| x >= 1) && self.n.windows(2).all(|p| p[0].abs_diff(p[1]) <= 1)
    }

    pub fn ell(&self) -> usize {
        self.n.len() - 1
    }

    pub fn step(&self, i: usize) -> i64 {
        i64::from(self.n[i]) - i64::from(self.n[i - 1])
    }
}

/// The walk `n` together with the companion walk `m`: `m_0 = 0`, and `m`
/// moves by `+-1` exactly on the flat steps of `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JointWalk {
    pub n: Vec<u32>,
    pub m: Vec<i64>,
}

impl JointWalk {
    pub fn ell(&self) -> usize {
        self.n.len() - 1
    }

    /// `sigma_i = m_i - m_{i-1}`.
    pub fn sigma(&self) -> Vec<i64> {
        self.m.windows(2).map(|p| p[1] - p[0]).collect()
    }

    /// Occupation variables from `2 tau_i - 1 = (n_i - n_{i-1}) + sigma_i`.
    pub fn tau(&self) -> Vec<bool> {
        (1..self.n.len())
            .map(|i| i64::from(self.n[i]) - i64::from(self.n[i - 1]) + self.m[i] - self.m[i - 1] == 1)
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.m.len() == self.n.len()
            && self.m[0] == 0
            && (1..self.n.len()).all(|i| {
                let dn = self.n[i].abs_diff(self.n[i - 1]);
                let dm = self.m[i].abs_diff(self.m[i - 1]);
                self.n[i] >= 1 && u64::from(dn) + dm == 1
            })
    }

    /// `n_i - n_0 + m_i`, the height increments `h(i) - h(0)`.
    pub fn height_increments(&self) -> Vec<i64> {
        let n0 = i64::from(self.n[0]);
        self.n.iter().zip(&self.m).map(|(&n, &m)| i64::from(n) - n0 + m).collect()
    }
}

/// `log Omega(n)`, or `-inf` for a walk that leaves the positive integers or
/// takes a step larger than one.
pub fn walk_weight(params: &ModelParams, n: &[u32]) -> f64 {
    if n.is_empty() || n.contains(&0) {
        return f64::NEG_INFINITY;
    }
    let mut lw = f64::from(n[0]) * ((1.0 - params.rho_a) / params.rho_a).ln()
        + f64::from(n[n.len() - 1]) * (params.rho_b / (1.0 - params.rho_b)).ln();
    for p in n.windows(2) {
        lw += match p[0].abs_diff(p[1]) {
            0 => LN_2,
            1 => 0.0,
            _ => return f64::NEG_INFINITY,
        };
    }
    lw + n.iter().map(|&x| q_int(x, params.q).ln()).sum::<f64>()
}

/// Backward partition sums and the derived sampling tables.
#[derive(Debug, Clone)]
pub struct PartitionTable {
    pub ell: usize,
    pub n_max: usize,
    /// `log R[i][n]`, row-major `(ell + 1) x n_max`, `n` stored at index `n - 1`.
    log_r: Vec<f64>,
    /// Cumulative law of `n_0`.
    start_cdf: Vec<f64>,
    /// For step `i -> i + 1` from height `n`: cumulative probabilities of `n - 1` and `n`.
    step_cdf: Vec<[f64; 2]>,
    pub log_z: f64,
}

impl PartitionTable {
    pub fn log_r(&self, i: usize, n: u32) -> f64 {
        if n == 0 || n as usize > self.n_max {
            f64::NEG_INFINITY
        } else {
            self.log_r[i * self.n_max + n as usize - 1]
        }
    }
}

/// Backward DP over `ell = params.ell` steps with heights `1..=n_max`.
/// The total is checked against the matrix-product normalization.
pub fn build_partition_table(params: &ModelParams, n_max: usize) -> Result<PartitionTable> {
    if !params.liggett {
        return Err(Error::NotLiggett);
    }
    params.check_normalizable()?;
    if params.rho_a >= 1.0 || params.rho_b <= 0.0 {
        return Err(Error::InvalidParameter("walk weights need 0 < rho_b < rho_a < 1".into()));
    }
    if n_max < 2 {
        return Err(Error::InvalidParameter("n_max must be at least 2".into()));
    }
    let ell = params.ell;
    let log_qn: Vec<f64> = (1..=n_max as u32).map(|n| q_int(n, params.q).ln()).collect();
    let ln_ra = ((1.0 - params.rho_a) / params.rho_a).ln();
    let ln_rb = (params.rho_b / (1.0 - params.rho_b)).ln();

    let mut log_r = vec![f64::NEG_INFINITY; (ell + 1) * n_max];
    for k in 0..n_max {
        log_r[ell * n_max + k] = (k + 1) as f64 * ln_rb + log_qn[k];
    }
    for i in (0..ell).rev() {
        let (head, tail) = log_r.split_at_mut((i + 1) * n_max);
        let next = &tail[..n_max];
        let row = &mut head[i * n_max..];
        for k in 0..n_max {
            let down = if k > 0 { next[k - 1] } else { f64::NEG_INFINITY };
            let up = if k + 1 < n_max { next[k + 1] } else { f64::NEG_INFINITY };
            row[k] = log_qn[k] + log_sum_exp(&[down, LN_2 + next[k], up]);
        }
    }

    let start: Vec<f64> = (0..n_max).map(|k| (k + 1) as f64 * ln_ra + log_r[k]).collect();
    let log_z = log_sum_exp(&start);
    let mut start_cdf = Vec::with_capacity(n_max);
    let mut acc = 0.0;
    for &s in &start {
        acc += (s - log_z).exp();
        start_cdf.push(acc);
    }

    let mut step_cdf = vec![[1.0, 1.0]; ell * n_max];
    for i in 0..ell {
        let next = &log_r[(i + 1) * n_max..(i + 2) * n_max];
        for k in 0..n_max {
            let down = if k > 0 { next[k - 1] } else { f64::NEG_INFINITY };
            let flat = LN_2 + next[k];
            let up = if k + 1 < n_max { next[k + 1] } else { f64::NEG_INFINITY };
            let norm = log_sum_exp(&[down, flat, up]);
            let p_down = (down - norm).exp();
            let p_flat = (flat - norm).exp();
            step_cdf[i * n_max + k] = [p_down, p_down + p_flat];
        }
    }

    let mpa_log_z = build_representation(params, n_max)?.log_normalization(ell);
    if (mpa_log_z - log_z).abs() > 1e-10 {
        return Err(Error::Inconsistent(format!(
            "partition table disagrees with matrix product normalization: {log_z} vs {mpa_log_z}"
        )));
    }
    Ok(PartitionTable { ell, n_max, log_r, start_cdf, step_cdf, log_z })
}

fn search_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap();
    cdf.partition_point(|&c| c <= u * total).min(cdf.len() - 1)
}

/// Exact draw from the walk measure restricted to heights `<= n_max`.
pub fn sample_walk(table: &PartitionTable, rng: &mut RandomStream) -> Walk {
    let mut n = Vec::with_capacity(table.ell + 1);
    let mut cur = search_cdf(&table.start_cdf, rng.uniform()) as u32 + 1;
    n.push(cur);
    for i in 0..table.ell {
        let [c_down, c_flat] = table.step_cdf[i * table.n_max + cur as usize - 1];
        let u = rng.uniform();
        if u < c_down {
            cur -= 1;
        } else if u >= c_flat {
            cur += 1;
        }
        n.push(cur);
    }
    Walk { n }
}

/// `tau_i` forced by up/down steps, a fair coin on flat steps.
pub fn sample_tau_given_walk(walk: &Walk, rng: &mut RandomStream) -> Vec<bool> {
    (1..walk.n.len())
        .map(|i| match walk.step(i) {
            1 => true,
            -1 => false,
            _ => rng.coin(),
        })
        .collect()
}

pub fn sample_joint(table: &PartitionTable, rng: &mut RandomStream) -> JointWalk {
    let walk = sample_walk(table, rng);
    let mut m = Vec::with_capacity(walk.n.len());
    m.push(0i64);
    let mut cur = 0;
    for i in 1..walk.n.len() {
        if walk.step(i) == 0 {
            cur += if rng.coin() { 1 } else { -1 };
        }
        m.push(cur);
    }
    JointWalk { n: walk.n, m }
}

/// Continuum fields built from a joint walk on the weakly asymmetric lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledPaths {
    pub u: PathSample,
    pub v: PathSample,
}

impl RescaledPaths {
    /// `H_eps(x) = U_eps(x) - U_eps(0) + V_eps(x)`.
    pub fn height(&self) -> PathSample {
        let u0 = self.u.values[0];
        PathSample {
            grid: self.u.grid,
            values: self.u.values.iter().zip(&self.v.values).map(|(u, v)| u - u0 + v).collect(),
            log_weight: 0.0,
        }
    }
}

/// `U_eps = (eps/2)(n + eps^{-1} log(eps^2/4))`, `V_eps = (eps/2) m` at lattice
/// points `x_i = i L / ell`, linearly interpolated onto `output`.
pub fn rescale(jw: &JointWalk, scaling: &ScalingParams, output: Grid) -> Result<RescaledPaths> {
    if jw.ell() != scaling.ell {
        return Err(Error::InvalidParameter(format!(
            "walk has {} steps but epsilon={} and L={} need {}",
            jw.ell(),
            scaling.epsilon,
            scaling.length,
            scaling.ell
        )));
    }
    if (output.length - scaling.length).abs() > 1e-12 * scaling.length {
        return Err(Error::InvalidParameter("output grid must span [0, L]".into()));
    }
    let eps = scaling.epsilon;
    let shift = (eps * eps / 4.0).ln() / eps;
    let u: Vec<f64> = jw.n.iter().map(|&n| eps / 2.0 * (f64::from(n) + shift)).collect();
    let v: Vec<f64> = jw.m.iter().map(|&m| eps / 2.0 * m as f64).collect();
    Ok(RescaledPaths {
        u: PathSample { grid: output, values: interpolate(&u, scaling.length, output), log_weight: 0.0 },
        v: PathSample { grid: output, values: interpolate(&v, scaling.length, output), log_weight: 0.0 },
    })
}
