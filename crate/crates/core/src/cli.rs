//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::continuum::{self, ConvergenceSpec, EnsembleSpec, Field};
use crate::dynamics::{sample_stationary_dynamics, tau_from_index, Configuration};
use crate::error::{Error, Result};
use crate::mpa::{
    adapt_truncation, alternative_pair, build_general_representation, build_representation, rate_defined_pair,
    verify_algebra, verify_appendix_recursions, RecursionCase, TruncatedMpa,
};
use crate::oracle::{build_generator, enumerate_walk_measure, stationary_solve, MAX_GENERATOR_ELL};
use crate::params::{weak_asymmetry, ModelParams, ParamFile, ScalingParams};
use crate::path::Grid;
use crate::report::{write_csv, Report};
use crate::rng::RandomStream;
use crate::stats::{self, Estimate};
use crate::walks::{build_partition_table, rescale, sample_joint, JointWalk, PartitionTable};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ASEP_KPZ_THREADS";

#[derive(Debug, Parser)]
#[command(name = "asep-kpz", version, about = "Open ASEP and KPZ-on-an-interval stationary measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gillespie simulation of the open ASEP.
    Dynamics(DynamicsArgs),
    /// Normalization, current and density profile from the matrix product ansatz.
    Mpa(MpaArgs),
    /// Master-equation stationary law compared with another method.
    Oracle(OracleArgs),
    /// Exact samples of the walk representation.
    Walks(WalksArgs),
    /// Reweighted Brownian samples of the continuum stationary measure.
    KpzSample(KpzArgs),
    /// Lattice endpoint statistics at several epsilons against the continuum.
    Converge(ConvergeArgs),
    /// Residuals of the quadratic algebra and the coefficient recursions.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// key=value parameter file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (default stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Record wall-clock time in the report.
    #[arg(long, global = true)]
    runtime: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    rho_a: Option<f64>,
    #[arg(long)]
    rho_b: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Empty,
    Full,
    Walk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Compare {
    Mpa,
    Walks,
    Dynamics,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Initial state; `walk` draws it from the walk representation.
    #[arg(long, value_enum, default_value = "empty")]
    init: Init,
    #[arg(long, default_value_t = 10.0)]
    burn_in: f64,
    /// Number of snapshots.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Time between snapshots.
    #[arg(long, default_value_t = 1.0)]
    thin: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct MpaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Fixed truncation; adaptive when absent.
    #[arg(long, conflicts_with = "auto_truncate")]
    n_max: Option<usize>,
    #[arg(long)]
    auto_truncate: bool,
    #[arg(long, default_value_t = 1e-12)]
    rel_tol: f64,
    /// Include the density profile.
    #[arg(long)]
    profile: bool,
    /// Include algebra residuals.
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "mpa")]
    compare: Compare,
    /// Height cutoff for the matrix product and walk enumeration.
    #[arg(long, default_value_t = 40)]
    n_max: usize,
    #[arg(long, default_value_t = 10.0)]
    burn_in: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    thin: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct WalksArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Weak asymmetry mode: epsilon with --L --u --v.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "L")]
    length: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    v: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output grid intervals for the rescaled fields.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, default_value_t = 1e-12)]
    rel_tol: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct KpzArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    v: Option<f64>,
    #[arg(long = "L")]
    length: Option<f64>,
    /// Simulation grid intervals.
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    /// Stored grid intervals; must divide --grid.
    #[arg(long, default_value_t = 8)]
    record: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "H")]
    mode: Field,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    v: Option<f64>,
    #[arg(long = "L")]
    length: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Continuum sample count (default: --samples).
    #[arg(long)]
    continuum_samples: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    rel_tol: f64,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 64)]
    n_max: usize,
    #[arg(long, default_value_t = 50)]
    n_terms: usize,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code: 0 on success, 2 for invalid input, 1 for run-time failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.trim().parse::<usize>().ok()) {
        if n > 0 {
            // fails only when the pool already exists, e.g. a second call in-process
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Dynamics(a) => cmd_dynamics(a),
        Command::Mpa(a) => cmd_mpa(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Walks(a) => cmd_walks(a),
        Command::KpzSample(a) => cmd_kpz(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn load_config(common: &Common) -> Result<ParamFile> {
    match &common.config {
        Some(path) => ParamFile::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        None => Ok(ParamFile::default()),
    }
}

fn require(value: Option<f64>, name: &str) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidParameter(format!("--{name} is required")))
}

fn as_count(value: f64, name: &str) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("{name} must be a nonnegative integer, got {value}")))
    }
}

impl ModelArgs {
    fn ell(&self, cfg: &ParamFile) -> Result<Option<usize>> {
        match self.ell {
            Some(l) => Ok(Some(l)),
            None => cfg.get("ell").map(|x| as_count(x, "ell")).transpose(),
        }
    }

    /// Rates take precedence; densities given alongside them must agree.
    fn resolve(&self, cfg: &ParamFile) -> Result<ModelParams> {
        let pick = |flag: Option<f64>, key: &str| flag.or_else(|| cfg.get(key));
        let q = require(pick(self.q, "q"), "q")?;
        let rates = [
            pick(self.alpha, "alpha"),
            pick(self.beta, "beta"),
            pick(self.gamma, "gamma"),
            pick(self.delta, "delta"),
        ];
        let rho_a = pick(self.rho_a, "rho_a");
        let rho_b = pick(self.rho_b, "rho_b");
        let mut params = if rates.iter().any(Option::is_some) {
            let [Some(alpha), Some(beta), Some(gamma), Some(delta)] = rates else {
                return Err(Error::InvalidParameter("give all four of --alpha --beta --gamma --delta".into()));
            };
            let p = ModelParams::from_rates(alpha, beta, gamma, delta, q)?;
            for (name, given, derived) in [("rho_a", rho_a, p.rho_a), ("rho_b", rho_b, p.rho_b)] {
                if let Some(g) = given {
                    if (g - derived).abs() > 1e-9 {
                        return Err(Error::InvalidParameter(format!(
                            "{name}={g} conflicts with the rates, which give {derived}"
                        )));
                    }
                }
            }
            p
        } else {
            ModelParams::from_densities(require(rho_a, "rho-a")?, require(rho_b, "rho-b")?, q)?
        };
        if let Some(ell) = self.ell(cfg)? {
            if ell == 0 {
                return Err(Error::InvalidParameter("ell must be at least 1".into()));
            }
            params = params.with_ell(ell);
        }
        Ok(params)
    }

    fn resolve_with_ell(&self, cfg: &ParamFile) -> Result<ModelParams> {
        if self.ell(cfg)?.is_none() {
            return Err(Error::InvalidParameter("--ell is required".into()));
        }
        self.resolve(cfg)
    }
}

fn echo_model(report: &mut Report, p: &ModelParams) {
    report
        .param("q", p.q)
        .param("alpha", p.alpha)
        .param("beta", p.beta)
        .param("gamma", p.gamma)
        .param("delta", p.delta)
        .param("rho_a", p.rho_a)
        .param("rho_b", p.rho_b)
        .param("liggett", p.liggett)
        .param("ell", p.ell);
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_report(common: &Common, mut report: Report, started: Instant) -> Result<()> {
    if common.runtime {
        report.diagnostics.runtime_seconds = Some(started.elapsed().as_secs_f64());
    }
    let mut out = open_out(common.out.as_deref())?;
    out.write_all(report.to_json()?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn emit_csv(common: &Common, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_csv(open_out(common.out.as_deref())?, header, rows)
}

fn tau_string(tau: &[bool]) -> String {
    tau.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Matrix product representation for `params`: Liggett form when it applies,
/// otherwise the rate-defined pair.
fn representation(params: &ModelParams, n_max: usize) -> Result<TruncatedMpa> {
    if params.liggett {
        build_representation(params, n_max)
    } else {
        let (d, e) = rate_defined_pair(params)?;
        build_general_representation(params, d, e, n_max)
    }
}

fn walk_truncation(params: &ModelParams, n_max: Option<usize>, rel_tol: f64) -> Result<usize> {
    match n_max {
        Some(n) => Ok(n),
        None => adapt_truncation(params, params.ell, rel_tol),
    }
}

fn cmd_mpa(a: MpaArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let params = a.model.resolve_with_ell(&cfg)?;
    let n_max = match a.n_max {
        Some(n) => n,
        None => adapt_truncation(&params, params.ell, a.rel_tol)?,
    };
    let mpa = representation(&params, n_max)?;
    let mut report = Report::new("mpa", None);
    echo_model(&mut report, &params);
    report.param("n_max", n_max).param("rel_tol", a.rel_tol);
    let log_z = mpa.log_normalization(params.ell);
    report.push_exact("log_Z", log_z).push_exact("Z", log_z.exp()).push_exact("current", mpa.current(params.ell)?);
    if a.profile {
        let profile = mpa.density_profile(params.ell);
        for (i, rho) in profile.iter().enumerate() {
            report.push_exact(format!("density_{}", i + 1), *rho);
        }
        report.data = Some(json!({ "profile": profile }));
    }
    if a.verify {
        let r = verify_algebra(&mpa, &params);
        report.residual("algebra_bulk", r.max_bulk).residual("algebra_v", r.max_v).residual("algebra_w", r.max_w);
    }
    emit_report(&a.common, report, started)
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let params = a.model.resolve(&cfg)?;
    let mut report = Report::new("verify", None);
    echo_model(&mut report, &params);
    report.param("n_max", a.n_max).param("n_terms", a.n_terms);

    let mut cases: Vec<(&str, TruncatedMpa)> = Vec::new();
    if params.liggett {
        cases.push(("liggett", build_representation(&params, a.n_max)?));
    }
    let (d, e) = rate_defined_pair(&params)?;
    cases.push(("rate_defined", build_general_representation(&params, d, e, a.n_max)?));
    let (d2, e2) = alternative_pair(&params);
    cases.push(("alternative", build_general_representation(&params, d2, e2, a.n_max)?));
    let mut worst: f64 = 0.0;
    for (name, mpa) in &cases {
        let r = verify_algebra(mpa, &params);
        report
            .residual(&format!("algebra_{name}_bulk"), r.max_bulk)
            .residual(&format!("algebra_{name}_v"), r.max_v)
            .residual(&format!("algebra_{name}_w"), r.max_w);
        worst = worst.max(r.max());
    }
    if params.liggett {
        let diff = cases[0].1.max_coefficient_difference(&build_general_representation(&params, params.q, params.q, a.n_max)?);
        report.residual("liggett_vs_general", diff);
        worst = worst.max(diff);
    }
    for (name, case) in [("rate_defined", RecursionCase::rate_defined(&params)?), ("alternative", RecursionCase::alternative(&params))] {
        let r = verify_appendix_recursions(&case, a.n_terms)?;
        report.residual(&format!("recursion_{name}"), r.max());
        worst = worst.max(r.max());
    }
    report.push_exact("max_residual", worst);
    if !(worst < 1e-12) {
        report.diagnostics.warnings.push(format!("max residual {worst:e} exceeds 1e-12"));
    }
    emit_report(&a.common, report, started)
}

/// Stationary law by the master equation for `params.ell` sites.
fn master_equation(params: &ModelParams) -> Result<Vec<f64>> {
    stationary_solve(&build_generator(params)?)
}

fn initial_configuration(params: &ModelParams, init: Init, rng: &mut RandomStream) -> Result<Configuration> {
    let tau = match init {
        Init::Empty => vec![false; params.ell],
        Init::Full => vec![true; params.ell],
        Init::Walk => {
            let n_max = adapt_truncation(params, params.ell, 1e-12)?;
            let table = build_partition_table(params, n_max)?;
            sample_joint(&table, rng).tau()
        }
    };
    Ok(Configuration::new(tau))
}

/// Empirical state frequencies from dynamics snapshots.
fn empirical_distribution(snapshots: &[Configuration], ell: usize) -> Vec<f64> {
    let mut counts = vec![0.0; 1 << ell];
    for s in snapshots {
        counts[s.index()] += 1.0;
    }
    let n = snapshots.len() as f64;
    counts.into_iter().map(|c| c / n).collect()
}

fn cmd_dynamics(a: DynamicsArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let params = a.model.resolve_with_ell(&cfg)?;
    let stream = RandomStream::new(a.seed, 0);
    let initial = initial_configuration(&params, a.init, &mut stream.derive(0))?;
    let run = sample_stationary_dynamics(&params, initial, a.burn_in, a.samples, a.thin, &mut stream.derive(1))?;
    if a.format == Format::Csv {
        return emit_csv(
            &a.common,
            &["snapshot", "t", "net_left", "index", "tau"],
            run.snapshots.iter().enumerate().map(|(k, s)| {
                vec![k.to_string(), s.t.to_string(), s.net_left.to_string(), s.index().to_string(), tau_string(&s.tau)]
            }),
        );
    }
    let mut report = Report::new("dynamics", Some(a.seed));
    echo_model(&mut report, &params);
    report
        .param("init", format!("{:?}", a.init).to_lowercase())
        .param("burn_in", a.burn_in)
        .param("samples", a.samples)
        .param("thin", a.thin);
    // standard errors treat snapshots as independent
    for i in 0..params.ell {
        let occ: Vec<f64> = run.snapshots.iter().map(|s| f64::from(u8::from(s.tau[i]))).collect();
        report.push(format!("density_{}", i + 1), stats::mean(&occ, None)?);
    }
    let flux: Vec<f64> = run.snapshots.windows(2).map(|w| (w[1].net_left - w[0].net_left) as f64 / a.thin).collect();
    if !flux.is_empty() {
        report.push("current", stats::mean(&flux, None)?);
    }
    report.param("events", run.events);
    emit_report(&a.common, report, started)
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let params = a.model.resolve_with_ell(&cfg)?;
    if params.ell > MAX_GENERATOR_ELL {
        return Err(Error::GuardExceeded(format!("ell={} exceeds {MAX_GENERATOR_ELL}", params.ell)));
    }
    let exact = master_equation(&params)?;
    let ell = params.ell;
    let (other, seed) = match a.compare {
        Compare::Mpa => {
            let mpa = representation(&params, a.n_max)?;
            ((0..1usize << ell).map(|k| mpa.stationary_probability(&tau_from_index(k, ell))).collect(), None)
        }
        Compare::Walks => (enumerate_walk_measure(&params, a.n_max)?.marginal, None),
        Compare::Dynamics => {
            let stream = RandomStream::new(a.seed, 0);
            let initial = initial_configuration(&params, Init::Empty, &mut stream.derive(0))?;
            let run = sample_stationary_dynamics(&params, initial, a.burn_in, a.samples, a.thin, &mut stream.derive(1))?;
            (empirical_distribution(&run.snapshots, ell), Some(a.seed))
        }
    };
    let mut report = Report::new("oracle", seed);
    echo_model(&mut report, &params);
    report.param("compare", format!("{:?}", a.compare).to_lowercase()).param("n_max", a.n_max);
    if a.compare == Compare::Dynamics {
        report.param("burn_in", a.burn_in).param("samples", a.samples).param("thin", a.thin);
    }
    report
        .push_exact("max_abs_difference", max_abs_difference(&exact, &other))
        .push_exact("total_variation", total_variation(&exact, &other));
    let states: Vec<_> = (0..exact.len())
        .map(|k| json!({ "index": k, "tau": tau_string(&tau_from_index(k, ell)), "master_equation": exact[k], "other": other[k] }))
        .collect();
    report.data = Some(json!({ "states": states }));
    emit_report(&a.common, report, started)
}

fn sample_walks(table: &PartitionTable, samples: usize, stream: &RandomStream) -> Vec<JointWalk> {
    use rayon::prelude::*;
    (0..samples as u64).into_par_iter().map(|i| sample_joint(table, &mut stream.derive(i))).collect()
}

fn cmd_walks(a: WalksArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let pick = |flag: Option<f64>, key: &str| flag.or_else(|| cfg.get(key));
    let epsilon = pick(a.epsilon, "epsilon");
    let (scaling, params): (Option<ScalingParams>, ModelParams) = match epsilon {
        Some(eps) => {
            let (s, p) = weak_asymmetry(
                eps,
                require(pick(a.length, "L"), "L")?,
                require(pick(a.u, "u"), "u")?,
                require(pick(a.v, "v"), "v")?,
            )?;
            (Some(s), p)
        }
        None => (None, a.model.resolve_with_ell(&cfg)?),
    };
    if a.samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let n_max = walk_truncation(&params, a.n_max, a.rel_tol)?;
    let table = build_partition_table(&params, n_max)?;
    let stream = RandomStream::new(a.seed, 0);
    let walks = sample_walks(&table, a.samples, &stream);

    if a.format == Format::Csv {
        return match &scaling {
            Some(s) => {
                let grid = Grid::new(a.grid, s.length);
                let mut rows = Vec::with_capacity(a.samples * grid.points());
                for (k, jw) in walks.iter().enumerate() {
                    let r = rescale(jw, s, grid)?;
                    let h = r.height();
                    for j in 0..grid.points() {
                        rows.push(vec![
                            k.to_string(),
                            grid.x(j).to_string(),
                            r.u.values[j].to_string(),
                            r.v.values[j].to_string(),
                            h.values[j].to_string(),
                        ]);
                    }
                }
                emit_csv(&a.common, &["sample", "x", "U_eps", "V_eps", "H_eps"], rows)
            }
            None => emit_csv(
                &a.common,
                &["sample", "i", "n", "m", "height"],
                walks.iter().enumerate().flat_map(|(k, jw)| {
                    let h = jw.height_increments();
                    (0..jw.n.len())
                        .map(move |i| {
                            vec![k.to_string(), i.to_string(), jw.n[i].to_string(), jw.m[i].to_string(), h[i].to_string()]
                        })
                        .collect::<Vec<_>>()
                }),
            ),
        };
    }

    let mut report = Report::new("walks", Some(a.seed));
    echo_model(&mut report, &params);
    report.param("samples", a.samples).param("n_max", n_max);
    report.residual("log_Z_table", table.log_z);
    let n0: Vec<f64> = walks.iter().map(|w| f64::from(w.n[0])).collect();
    report.push("mean_n_0", stats::mean(&n0, None)?).push("var_n_0", stats::variance(&n0, None)?);
    match &scaling {
        Some(s) => {
            report.param("epsilon", s.epsilon).param("L", s.length).param("u", s.u).param("v", s.v).param("grid", a.grid);
            let ends = Grid::new(1, s.length);
            let mut h = Vec::with_capacity(walks.len());
            let mut vv = Vec::with_capacity(walks.len());
            let mut u0 = Vec::with_capacity(walks.len());
            for jw in &walks {
                let r = rescale(jw, s, ends)?;
                h.push(r.u.values[1] - r.u.values[0] + r.v.values[1]);
                vv.push(r.v.values[1]);
                u0.push(r.u.values[0]);
            }
            report
                .push("mean_H_L", stats::mean(&h, None)?)
                .push("var_H_L", stats::variance(&h, None)?)
                .push("var_V_L", stats::variance(&vv, None)?)
                .push("mean_U_0", stats::mean(&u0, None)?);
        }
        None => {
            for i in 0..params.ell {
                let occ: Vec<f64> = walks.iter().map(|w| f64::from(u8::from(w.tau()[i]))).collect();
                report.push(format!("density_{}", i + 1), stats::mean(&occ, None)?);
            }
        }
    }
    emit_report(&a.common, report, started)
}

fn boundary_args(u: Option<f64>, v: Option<f64>, length: Option<f64>, cfg: &ParamFile) -> Result<(f64, f64, f64)> {
    let pick = |flag: Option<f64>, key: &str| flag.or_else(|| cfg.get(key));
    Ok((require(pick(u, "u"), "u")?, require(pick(v, "v"), "v")?, require(pick(length, "L"), "L")?))
}

fn cmd_kpz(a: KpzArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let (u, v, length) = boundary_args(a.u, a.v, a.length, &cfg)?;
    continuum::check_boundary(u, v)?;
    let spec = EnsembleSpec::new(u, v, length, a.grid, a.samples, a.mode).with_record(a.record);
    let ens = continuum::sample_ensemble(&spec, &RandomStream::new(a.seed, 0))?;
    let record = spec.record_grid();

    if a.format == Format::Csv {
        let mut rows = Vec::with_capacity(ens.len() * record.points());
        for (k, m) in ens.members.iter().enumerate() {
            for j in 0..record.points() {
                rows.push(vec![
                    k.to_string(),
                    record.x(j).to_string(),
                    m.field(a.mode, j).to_string(),
                    m.log_weight.to_string(),
                    ens.weights[k].to_string(),
                ]);
            }
        }
        return emit_csv(&a.common, &["sample", "x", "value", "log_weight", "weight"], rows);
    }

    let mut report = Report::new("kpz-sample", Some(a.seed));
    report
        .param("u", u)
        .param("v", v)
        .param("L", length)
        .param("grid", a.grid)
        .param("record", a.record)
        .param("samples", a.samples)
        .param("mode", format!("{:?}", a.mode));
    let name = format!("{:?}", a.mode);
    for j in 0..record.points() {
        let col = ens.field_at(j);
        report.push(format!("mean_{name}_{j}"), ens.mean(&col)?).push(format!("var_{name}_{j}"), ens.variance(&col)?);
    }
    if a.mode == Field::U {
        let g = ens.column(|m| m.zero_mode.map_or(f64::NAN, |z| z.gamma));
        report.push("mean_zero_mode_gamma", ens.mean(&g)?);
    }
    report.diagnostics.ess = Some(ens.ess);
    if ens.low_ess {
        report.diagnostics.warnings.push(format!("effective sample size {:.1} below 1% of {}", ens.ess, a.samples));
    }
    report.data = Some(json!({ "x": (0..record.points()).map(|j| record.x(j)).collect::<Vec<_>>() }));
    emit_report(&a.common, report, started)
}

fn cmd_converge(a: ConvergeArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&a.common)?;
    let (u, v, length) = boundary_args(a.u, a.v, a.length, &cfg)?;
    let spec = ConvergenceSpec {
        u,
        v,
        length,
        epsilons: a.epsilons.clone(),
        samples: a.samples,
        m: a.grid,
        continuum_samples: a.continuum_samples.unwrap_or(a.samples),
        rel_tol: a.rel_tol,
    };
    if spec.samples == 0 || spec.continuum_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let table = continuum::convergence_study(&spec, &RandomStream::new(a.seed, 0))?;

    let mut entries: Vec<(String, String, Estimate)> = Vec::new();
    for (k, name) in table.observables.iter().enumerate() {
        for row in &table.rows {
            entries.push((name.clone(), row.epsilon.to_string(), row.values[k]));
        }
        if let Some(ex) = &table.extrapolated {
            entries.push((name.clone(), "extrapolated".into(), ex[k]));
        }
        entries.push((name.clone(), "continuum".into(), table.continuum[k]));
    }
    if a.format == Format::Csv {
        return emit_csv(
            &a.common,
            &["observable", "epsilon", "estimate", "stderr", "n_effective"],
            entries.iter().map(|(n, e, est)| {
                vec![n.clone(), e.clone(), est.estimate.to_string(), est.stderr.to_string(), est.n_effective.to_string()]
            }),
        );
    }
    let mut report = Report::new("converge", Some(a.seed));
    report
        .param("u", u)
        .param("v", v)
        .param("L", length)
        .param("epsilons", &a.epsilons)
        .param("samples", spec.samples)
        .param("continuum_samples", spec.continuum_samples)
        .param("grid", a.grid)
        .param("rel_tol", a.rel_tol);
    for (name, eps, est) in &entries {
        report.push(format!("{name}@{eps}"), *est);
    }
    report.diagnostics.ess = Some(table.continuum_ess);
    report.data = Some(json!({
        "lattice": table.rows.iter().map(|r| json!({ "epsilon": r.epsilon, "ell": r.ell, "n_max": r.n_max })).collect::<Vec<_>>()
    }));
    emit_report(&a.common, report, started)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ParamFile {
        ParamFile::parse(text).unwrap()
    }

    fn model(rho_a: Option<f64>, alpha: Option<f64>) -> ModelArgs {
        ModelArgs { ell: Some(3), q: Some(0.5), rho_a, rho_b: Some(0.3), alpha, beta: None, gamma: None, delta: None }
    }

    #[test]
    fn config_supplies_missing_flags() {
        let m = ModelArgs { ell: None, q: None, rho_a: None, rho_b: Some(0.2), alpha: None, beta: None, gamma: None, delta: None };
        let p = m.resolve(&cfg("q=0.5\nrho_a=0.7\nrho_b=0.3\nell=4\n")).unwrap();
        assert_eq!((p.q, p.rho_a, p.rho_b, p.ell), (0.5, 0.7, 0.2, 4));
    }

    #[test]
    fn partial_rates_are_rejected() {
        let e = model(None, Some(0.7)).resolve(&ParamFile::default()).unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn conflicting_rates_and_densities() {
        let rates = "alpha=0.7\nbeta=0.7\ngamma=0.15\ndelta=0.15\n";
        assert!(model(Some(0.7), None).resolve(&cfg(rates)).is_ok());
        let e = model(Some(0.6), None).resolve(&cfg(rates)).unwrap_err();
        assert!(e.to_string().contains("conflicts"));
    }

    #[test]
    fn fractional_ell_in_config() {
        let m = ModelArgs { ell: None, q: Some(0.5), rho_a: Some(0.7), rho_b: Some(0.3), alpha: None, beta: None, gamma: None, delta: None };
        assert!(m.resolve(&cfg("ell=2.5")).is_err());
    }

    #[test]
    fn help_and_unknown_flags() {
        assert_eq!(run(["asep-kpz", "--help"]), 0);
        assert_eq!(run(["asep-kpz", "mpa", "--bogus"]), 2);
        assert_eq!(run(["asep-kpz", "frobnicate"]), 2);
    }
}
