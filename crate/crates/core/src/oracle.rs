//! Brute-force ground truth for small systems: the master-equation
//! stationary distribution on `{0,1}^ell` and exhaustive enumeration of the
//! weighted walks. Nothing here goes through the matrix product code.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::condensation;
use petgraph::graph::DiGraph;
use petgraph::Direction;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{q_int, ModelParams};

pub const MAX_GENERATOR_ELL: usize = 14;
pub const MAX_ENUM_ELL: usize = 10;
pub const MAX_ENUM_N: usize = 40;

/// Off-diagonal rates of the ASEP generator on `{0,1}^ell`, with
/// configurations indexed so that bit `i - 1` is `tau_i`.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratorMatrix {
    pub ell: usize,
    /// `(from, to, rate)`, aggregated so each pair appears once.
    pub transitions: Vec<(usize, usize, f64)>,
    /// Total outgoing rate per state (minus the diagonal).
    pub exit_rates: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn dim(&self) -> usize {
        1 << self.ell
    }

    /// `Q[from][to]`; rows sum to zero.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut q = DMatrix::zeros(n, n);
        for &(a, b, r) in &self.transitions {
            q[(a, b)] += r;
        }
        for (s, &out) in self.exit_rates.iter().enumerate() {
            q[(s, s)] -= out;
        }
        q
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.transitions.iter().filter(|t| t.0 == from && t.1 == to).map(|t| t.2).sum()
    }
}

pub fn build_generator(params: &ModelParams) -> Result<GeneratorMatrix> {
    let ell = params.ell;
    if ell == 0 || ell > MAX_GENERATOR_ELL {
        return Err(Error::GuardExceeded(format!("generator needs 1 <= ell <= {MAX_GENERATOR_ELL}, got {ell}")));
    }
    let dim = 1usize << ell;
    let mut transitions = Vec::new();
    let mut exit_rates = vec![0.0; dim];
    let bit = |s: usize, i: usize| s >> i & 1 == 1;
    for s in 0..dim {
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut push = |to: usize, r: f64| {
            if r > 0.0 {
                match out.iter_mut().find(|(t, _)| *t == to) {
                    Some(entry) => entry.1 += r,
                    None => out.push((to, r)),
                }
            }
        };
        for i in 0..ell - 1 {
            let (a, b) = (bit(s, i), bit(s, i + 1));
            let swapped = s ^ (1 << i) ^ (1 << (i + 1));
            if a && !b {
                push(swapped, 1.0);
            }
            if b && !a {
                push(swapped, params.q);
            }
        }
        let last = ell - 1;
        if bit(s, 0) {
            push(s ^ 1, params.gamma);
        } else {
            push(s ^ 1, params.alpha);
        }
        if bit(s, last) {
            push(s ^ (1 << last), params.beta);
        } else {
            push(s ^ (1 << last), params.delta);
        }
        for (to, r) in out {
            exit_rates[s] += r;
            transitions.push((s, to, r));
        }
    }
    Ok(GeneratorMatrix { ell, transitions, exit_rates })
}

/// Number of closed communicating classes of the chain.
pub fn closed_classes(gen: &GeneratorMatrix) -> usize {
    let mut g = DiGraph::<(), ()>::with_capacity(gen.dim(), gen.transitions.len());
    let nodes: Vec<_> = (0..gen.dim()).map(|_| g.add_node(())).collect();
    for &(a, b, _) in &gen.transitions {
        g.add_edge(nodes[a], nodes[b], ());
    }
    let c = condensation(g, true);
    c.node_indices().filter(|&n| c.neighbors_directed(n, Direction::Outgoing).next().is_none()).count()
}

/// Unique stationary distribution `pi` with `pi Q = 0`, `sum pi = 1`, by a
/// dense LU solve with one balance equation replaced by normalization.
pub fn stationary_solve(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let classes = closed_classes(gen);
    if classes != 1 {
        return Err(Error::Reducible { closed_classes: classes });
    }
    let n = gen.dim();
    let mut a = gen.to_dense().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or(Error::Singular)?;
    let mut pi: Vec<f64> = pi.iter().map(|&x| if x < 0.0 && x > -1e-13 { 0.0 } else { x }).collect();
    if pi.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Singular);
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    Ok(pi)
}

/// `max_j |(pi Q)_j|`.
pub fn balance_residual(gen: &GeneratorMatrix, pi: &[f64]) -> f64 {
    let mut flow = vec![0.0; gen.dim()];
    for &(a, b, r) in &gen.transitions {
        flow[b] += pi[a] * r;
    }
    for (s, &out) in gen.exit_rates.iter().enumerate() {
        flow[s] -= pi[s] * out;
    }
    flow.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `P(tau | n) = prod_i (1 + (n_i - n_{i-1})(2 tau_i - 1)) / 2`.
pub fn conditional_tau_probability(walk: &[u32], tau: &[bool]) -> f64 {
    walk.windows(2)
        .zip(tau)
        .map(|(w, &t)| {
            let dn = f64::from(w[1]) - f64::from(w[0]);
            (1.0 + dn * if t { 1.0 } else { -1.0 }) / 2.0
        })
        .product()
}

/// All walks with `1 <= n_i <= n_max`, their normalized weights, and the
/// induced distribution of `tau`.
#[derive(Debug, Clone)]
pub struct WalkEnumeration {
    pub ell: usize,
    pub n_max: usize,
    /// Flattened walks, `ell + 1` heights each.
    pub heights: Vec<u32>,
    pub nu: Vec<f64>,
    /// Sum of unnormalized weights over the enumerated walks.
    pub total_weight: f64,
    /// `P(tau)` indexed by configuration index.
    pub marginal: Vec<f64>,
}

impl WalkEnumeration {
    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn walk(&self, k: usize) -> &[u32] {
        &self.heights[k * (self.ell + 1)..(k + 1) * (self.ell + 1)]
    }

    /// `<tau_{i_1} ... tau_{i_k}>` (1-based sites) from the walk formula.
    pub fn correlation(&self, sites: &[usize]) -> f64 {
        (0..self.len())
            .map(|k| {
                let w = self.walk(k);
                self.nu[k]
                    * sites
                        .iter()
                        .map(|&i| (1.0 + f64::from(w[i]) - f64::from(w[i - 1])) / 2.0)
                        .product::<f64>()
            })
            .sum()
    }
}

/// Unnormalized walk weight, straight from the product formula.
fn omega(params: &ModelParams, walk: &[u32]) -> f64 {
    let rw = (1.0 - params.rho_a) / params.rho_a;
    let rv = params.rho_b / (1.0 - params.rho_b);
    let n0 = walk[0];
    let nl = walk[walk.len() - 1];
    let mut x = rw.powi(n0 as i32) * rv.powi(nl as i32);
    for pair in walk.windows(2) {
        x *= match pair[0].abs_diff(pair[1]) {
            0 => 2.0,
            1 => 1.0,
            _ => 0.0,
        };
    }
    for &n in walk {
        x *= q_int(n, params.q);
    }
    x
}

pub fn enumerate_walk_measure(params: &ModelParams, n_max: usize) -> Result<WalkEnumeration> {
    let ell = params.ell;
    if ell > MAX_ENUM_ELL || n_max > MAX_ENUM_N || n_max == 0 {
        return Err(Error::GuardExceeded(format!(
            "walk enumeration needs ell <= {MAX_ENUM_ELL} and 1 <= n_max <= {MAX_ENUM_N}"
        )));
    }
    params.check_normalizable()?;
    let mut heights = Vec::new();
    let mut weights = Vec::new();
    let mut walk = vec![0u32; ell + 1];
    // depth-first over all step sequences, pruning negligible partial weights
    fn dfs(
        depth: usize,
        walk: &mut Vec<u32>,
        partial: f64,
        n_max: u32,
        params: &ModelParams,
        heights: &mut Vec<u32>,
        weights: &mut Vec<f64>,
    ) {
        if partial < 1e-300 {
            return;
        }
        if depth == walk.len() {
            let w = omega(params, walk);
            if w > 0.0 {
                heights.extend_from_slice(walk);
                weights.push(w);
            }
            return;
        }
        let prev = walk[depth - 1];
        for next in prev.saturating_sub(1).max(1)..=(prev + 1).min(n_max) {
            walk[depth] = next;
            let step = if next == prev { 2.0 } else { 1.0 };
            dfs(depth + 1, walk, partial * step * q_int(next, params.q), n_max, params, heights, weights);
        }
    }
    let rw = (1.0 - params.rho_a) / params.rho_a;
    for n0 in 1..=n_max as u32 {
        walk[0] = n0;
        let partial = rw.powi(n0 as i32) * q_int(n0, params.q);
        dfs(1, &mut walk, partial, n_max as u32, params, &mut heights, &mut weights);
    }
    let total_weight: f64 = weights.iter().sum();
    let nu: Vec<f64> = weights.iter().map(|w| w / total_weight).collect();

    let mut marginal = vec![0.0; 1 << ell];
    for (k, &p) in nu.iter().enumerate() {
        let w = &heights[k * (ell + 1)..(k + 1) * (ell + 1)];
        let mut forced = 0usize;
        let mut flats = Vec::new();
        for i in 0..ell {
            match w[i + 1] as i64 - w[i] as i64 {
                1 => forced |= 1 << i,
                0 => flats.push(i),
                _ => {}
            }
        }
        let share = p / (1u64 << flats.len()) as f64;
        for mask in 0..1usize << flats.len() {
            let mut idx = forced;
            for (j, &site) in flats.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    idx |= 1 << site;
                }
            }
            marginal[idx] += share;
        }
    }
    Ok(WalkEnumeration { ell, n_max, heights, nu, total_weight, marginal })
}
