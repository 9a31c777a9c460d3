//! Continuum stationary measure on `[0, L]` by reweighted Brownian paths.
//!
//! `X` is Brownian with variance growth `1/2` per unit length, reweighted by
//! `S1^{-u} S2^{-v}` where `S1 = int e^{-2X}` and `S2 = int e^{2X(L) - 2X}`.
//! The height field is `H = W / sqrt(2) + X` with `W` an independent standard
//! Brownian path. The `U` description adds the zero mode
//! `U(0) = (log S1 - log G) / 2` with `G ~ Gamma(u + v, 1)`.

use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpa::adapt_truncation;
use crate::numerics::log_sum_exp;
use crate::params::weak_asymmetry;
use crate::path::{Grid, PathSample};
use crate::rng::RandomStream;
use crate::stats::{self, Estimate};
use crate::walks::{build_partition_table, rescale, sample_joint};

/// Variance per unit length of the reference path for `X`.
pub const X_DIFFUSION: f64 = 0.5;
/// Ensembles whose ESS falls below this fraction of the sample count are flagged.
pub const LOW_ESS_FRACTION: f64 = 0.01;

/// Accepts `u + v > 0`, and `u = v = 0` where the weight is identically one.
pub fn check_boundary(u: f64, v: f64) -> Result<()> {
    if !(u.is_finite() && v.is_finite()) {
        return Err(Error::InvalidParameter("u and v must be finite".into()));
    }
    if u + v > 0.0 || (u == 0.0 && v == 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("u+v must be positive (got u={u}, v={v})")))
    }
}

fn fill_brownian(values: &mut [f64], dx: f64, sigma2: f64, rng: &mut RandomStream) {
    let sd = (sigma2 * dx).sqrt();
    values[0] = 0.0;
    for k in 1..values.len() {
        let z: f64 = StandardNormal.sample(rng);
        values[k] = values[k - 1] + sd * z;
    }
}

/// Brownian path from 0 with `Var B(x) = sigma2 * x`.
pub fn sample_brownian(grid: Grid, sigma2: f64, rng: &mut RandomStream) -> PathSample {
    let mut values = vec![0.0; grid.points()];
    fill_brownian(&mut values, grid.dx(), sigma2, rng);
    PathSample { grid, values, log_weight: 0.0 }
}

/// `log int_0^L e^{-2X}` by the trapezoid rule.
pub fn log_s1(values: &[f64], dx: f64) -> f64 {
    let last = values.len() - 1;
    let terms: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, &x)| if k == 0 || k == last { -2.0 * x - std::f64::consts::LN_2 } else { -2.0 * x })
        .collect();
    log_sum_exp(&terms) + dx.ln()
}

fn log_weight_from(log_s1: f64, end: f64, u: f64, v: f64) -> f64 {
    // log S2 = 2 X(L) + log S1 holds exactly for the trapezoid sums too
    let mut lw = 0.0;
    if u != 0.0 {
        lw -= u * log_s1;
    }
    if v != 0.0 {
        lw -= v * (2.0 * end + log_s1);
    }
    lw
}

/// `-u log S1 - v log S2`.
pub fn rn_log_weight_x(path: &PathSample, u: f64, v: f64) -> f64 {
    log_weight_from(log_s1(&path.values, path.grid.dx()), path.end(), u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroMode {
    pub u0: f64,
    /// `e^{-2 U(0)} S1`, Gamma(u + v, 1) distributed.
    pub gamma: f64,
}

fn draw_zero_mode(log_s1: f64, u: f64, v: f64, rng: &mut RandomStream) -> Result<ZeroMode> {
    if !(u + v > 0.0) {
        return Err(Error::InvalidParameter(format!("u+v must be positive (got u={u}, v={v})")));
    }
    let g: f64 = Gamma::new(u + v, 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(rng);
    Ok(ZeroMode { u0: 0.5 * (log_s1 - g.ln()), gamma: g })
}

/// `U = U(0) + X` with the zero mode drawn from its conditional law given `X`.
pub fn resample_zero_mode(x: &PathSample, u: f64, v: f64, rng: &mut RandomStream) -> Result<(PathSample, ZeroMode)> {
    let zm = draw_zero_mode(log_s1(&x.values, x.grid.dx()), u, v, rng)?;
    let path = PathSample {
        grid: x.grid,
        values: x.values.iter().map(|x| x + zm.u0).collect(),
        log_weight: x.log_weight,
    };
    Ok((path, zm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Field {
    #[value(name = "X", alias = "x")]
    X,
    #[value(name = "H", alias = "h")]
    H,
    #[value(name = "U", alias = "u")]
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub u: f64,
    pub v: f64,
    pub length: f64,
    /// Simulation grid intervals.
    pub m: usize,
    /// Intervals of the stored grid; must divide `m`.
    pub record: usize,
    pub samples: usize,
    pub field: Field,
}

impl EnsembleSpec {
    pub fn new(u: f64, v: f64, length: f64, m: usize, samples: usize, field: Field) -> Self {
        Self { u, v, length, m, record: m, samples, field }
    }

    pub fn with_record(mut self, record: usize) -> Self {
        self.record = record;
        self
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.m, self.length)
    }

    pub fn record_grid(&self) -> Grid {
        Grid::new(self.record, self.length)
    }

    fn validate(&self) -> Result<()> {
        check_boundary(self.u, self.v)?;
        if self.field == Field::U && !(self.u + self.v > 0.0) {
            return Err(Error::InvalidParameter("u+v must be positive for the zero mode".into()));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidParameter(format!("L must be positive, got {}", self.length)));
        }
        if self.m == 0 || self.record == 0 || !self.m.is_multiple_of(self.record) {
            return Err(Error::InvalidParameter(format!(
                "record grid {} must divide simulation grid {}",
                self.record, self.m
            )));
        }
        if self.samples == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        Ok(())
    }
}

/// One weighted draw, stored on the record grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Member {
    pub x: Vec<f64>,
    /// Standard Brownian `W` for the `H` field.
    pub w: Option<Vec<f64>>,
    pub log_weight: f64,
    pub log_s1: f64,
    pub zero_mode: Option<ZeroMode>,
}

impl Member {
    pub fn h(&self, k: usize) -> f64 {
        let w = self.w.as_ref().map_or(0.0, |w| w[k]);
        w / std::f64::consts::SQRT_2 + self.x[k]
    }

    pub fn field(&self, field: Field, k: usize) -> f64 {
        match field {
            Field::X => self.x[k],
            Field::H => self.h(k),
            Field::U => self.x[k] + self.zero_mode.map_or(f64::NAN, |z| z.u0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    pub spec: EnsembleSpec,
    pub members: Vec<Member>,
    /// Self-normalized weights.
    pub weights: Vec<f64>,
    pub ess: f64,
    pub low_ess: bool,
}

impl WeightedEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn column(&self, f: impl Fn(&Member) -> f64) -> Vec<f64> {
        self.members.iter().map(f).collect()
    }

    pub fn field_at(&self, k: usize) -> Vec<f64> {
        self.column(|m| m.field(self.spec.field, k))
    }

    pub fn mean(&self, values: &[f64]) -> Result<Estimate> {
        stats::mean(values, Some(&self.weights))
    }

    pub fn variance(&self, values: &[f64]) -> Result<Estimate> {
        stats::variance(values, Some(&self.weights))
    }

    pub fn covariance(&self, a: &[f64], b: &[f64]) -> Result<Estimate> {
        stats::covariance(a, b, Some(&self.weights))
    }

    /// Paths of the ensemble's field on the record grid.
    pub fn paths(&self) -> Vec<PathSample> {
        let grid = self.spec.record_grid();
        self.members
            .iter()
            .map(|m| PathSample {
                grid,
                values: (0..grid.points()).map(|k| m.field(self.spec.field, k)).collect(),
                log_weight: m.log_weight,
            })
            .collect()
    }
}

fn draw_member(spec: &EnsembleSpec, rng: &mut RandomStream, buf: &mut [f64]) -> Result<Member> {
    let dx = spec.length / spec.m as f64;
    let stride = spec.m / spec.record;
    fill_brownian(buf, dx, X_DIFFUSION, rng);
    let ls1 = log_s1(buf, dx);
    let log_weight = log_weight_from(ls1, buf[spec.m], spec.u, spec.v);
    let x: Vec<f64> = buf.iter().step_by(stride).copied().collect();
    let w = if spec.field == Field::H {
        fill_brownian(buf, dx, 1.0, rng);
        Some(buf.iter().step_by(stride).copied().collect())
    } else {
        None
    };
    let zero_mode = if spec.field == Field::U { Some(draw_zero_mode(ls1, spec.u, spec.v, rng)?) } else { None };
    Ok(Member { x, w, log_weight, log_s1: ls1, zero_mode })
}

/// Draws `spec.samples` weighted paths; sample `i` uses `stream.derive(i)`.
pub fn sample_ensemble(spec: &EnsembleSpec, stream: &RandomStream) -> Result<WeightedEnsemble> {
    spec.validate()?;
    let members = (0..spec.samples as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; spec.m + 1],
            |buf, i| draw_member(spec, &mut stream.derive(i), buf),
        )
        .collect::<Result<Vec<_>>>()?;
    let log_w: Vec<f64> = members.iter().map(|m| m.log_weight).collect();
    let weights = stats::normalized_weights(&log_w)?;
    let ess = stats::ess(&weights);
    Ok(WeightedEnsemble {
        spec: *spec,
        members,
        weights,
        ess,
        low_ess: ess < LOW_ESS_FRACTION * spec.samples as f64,
    })
}

pub fn sample_x_ensemble(spec: EnsembleSpec, stream: &RandomStream) -> Result<WeightedEnsemble> {
    sample_ensemble(&EnsembleSpec { field: Field::X, ..spec }, stream)
}

pub fn sample_h_ensemble(spec: EnsembleSpec, stream: &RandomStream) -> Result<WeightedEnsemble> {
    sample_ensemble(&EnsembleSpec { field: Field::H, ..spec }, stream)
}

/// Endpoint observables compared between the lattice and the continuum.
pub const CONVERGENCE_OBSERVABLES: [&str; 4] = ["mean_H_L", "var_H_L", "var_X_L", "var_V_L"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub u: f64,
    pub v: f64,
    pub length: f64,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub m: usize,
    pub continuum_samples: usize,
    /// Truncation tolerance on `log Z` for the walk sampler.
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub ell: usize,
    pub n_max: usize,
    pub values: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub observables: Vec<String>,
    pub rows: Vec<ConvergenceRow>,
    /// Linear-in-epsilon extrapolation to 0, absent for a single epsilon.
    pub extrapolated: Option<Vec<Estimate>>,
    pub continuum: Vec<Estimate>,
    pub continuum_ess: f64,
}

/// Endpoint statistics of `(H_eps, X_eps, V_eps)` at `L` from exact walk samples.
pub fn lattice_endpoint_statistics(
    epsilon: f64,
    spec: &ConvergenceSpec,
    stream: &RandomStream,
) -> Result<ConvergenceRow> {
    let (scaling, params) = weak_asymmetry(epsilon, spec.length, spec.u, spec.v)?;
    let n_max = adapt_truncation(&params, params.ell, spec.rel_tol)?;
    let table = build_partition_table(&params, n_max)?;
    let ends = Grid::new(1, spec.length);
    let samples = (0..spec.samples as u64)
        .into_par_iter()
        .map(|i| {
            let jw = sample_joint(&table, &mut stream.derive(i));
            let r = rescale(&jw, &scaling, ends)?;
            let x = r.u.values[1] - r.u.values[0];
            Ok((x + r.v.values[1], x, r.v.values[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let x: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let v: Vec<f64> = samples.iter().map(|s| s.2).collect();
    Ok(ConvergenceRow {
        epsilon,
        ell: params.ell,
        n_max,
        values: vec![stats::mean(&h, None)?, stats::variance(&h, None)?, stats::variance(&x, None)?, stats::variance(&v, None)?],
    })
}

/// Lattice statistics for each epsilon (stream `derive(j + 1)`), their
/// extrapolation, and the continuum values from an `H` ensemble (stream `derive(0)`).
pub fn convergence_study(spec: &ConvergenceSpec, stream: &RandomStream) -> Result<ConvergenceTable> {
    if spec.u + spec.v <= 0.0 {
        return Err(Error::InvalidParameter(format!("u+v must be positive (got u={}, v={})", spec.u, spec.v)));
    }
    if spec.epsilons.is_empty() {
        return Err(Error::InvalidParameter("need at least one epsilon".into()));
    }
    for &eps in &spec.epsilons {
        weak_asymmetry(eps, spec.length, spec.u, spec.v)?;
    }
    let ens = sample_h_ensemble(
        EnsembleSpec::new(spec.u, spec.v, spec.length, spec.m, spec.continuum_samples, Field::H).with_record(1),
        &stream.derive(0),
    )?;
    let h = ens.field_at(1);
    let x = ens.column(|m| m.x[1]);
    let continuum = vec![
        ens.mean(&h)?,
        ens.variance(&h)?,
        ens.variance(&x)?,
        Estimate { estimate: spec.length / 2.0, stderr: 0.0, n_effective: 1.0 },
    ];

    let rows = spec
        .epsilons
        .iter()
        .enumerate()
        .map(|(j, &eps)| lattice_endpoint_statistics(eps, spec, &stream.derive(j as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let extrapolated = if rows.len() >= 2 {
        let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
        (0..CONVERGENCE_OBSERVABLES.len())
            .map(|k| {
                let ys: Vec<Estimate> = rows.iter().map(|r| r.values[k]).collect();
                stats::linear_extrapolation(&eps, &ys)
            })
            .collect::<Option<Vec<_>>>()
    } else {
        None
    };
    Ok(ConvergenceTable {
        observables: CONVERGENCE_OBSERVABLES.iter().map(|s| s.to_string()).collect(),
        rows,
        extrapolated,
        continuum,
        continuum_ess: ens.ess,
    })
}
