//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::HashMap;
use std::time::Instant;

use asep_kpz::continuum::{self, ConvergenceSpec, EnsembleSpec, Field};
use asep_kpz::dynamics::{sample_stationary_dynamics, tau_from_index, Configuration, EventTable};
use asep_kpz::mpa::{adapt_truncation, build_representation, verify_algebra, verify_appendix_recursions, RecursionCase};
use asep_kpz::oracle::{build_generator, enumerate_walk_measure, stationary_solve};
use asep_kpz::report::Report;
use asep_kpz::stats::{self, Estimate};
use asep_kpz::walks::{build_partition_table, sample_joint};
use asep_kpz::{ModelParams, RandomStream, Result};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

struct Outcome {
    pass: bool,
    summary: String,
    report: Report,
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit_seconds: f64,
    run: fn() -> Result<Outcome>,
}

const DENSITY_PAIRS: [(f64, f64); 3] = [(0.7, 0.3), (0.9, 0.2), (0.6, 0.4)];

fn densities(rho_a: f64, rho_b: f64, q: f64) -> ModelParams {
    ModelParams::from_densities(rho_a, rho_b, q).expect("valid densities")
}

fn max_abs_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `|a - b|` in units of the combined standard error.
fn z_score(a: Estimate, b: Estimate) -> f64 {
    (a.estimate - b.estimate).abs() / (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

fn algebra_suite() -> Result<Outcome> {
    let mut report = Report::new("verify", None);
    report.param("n_max", 64).param("n_terms", 50);
    let mut worst: f64 = 0.0;
    for q in [0.0, 0.3, 0.7, 0.95] {
        for (ra, rb) in DENSITY_PAIRS {
            let p = densities(ra, rb, q);
            let tag = format!("q={q},rho_a={ra},rho_b={rb}");
            let algebra = verify_algebra(&build_representation(&p, 64)?, &p).max();
            let rate = verify_appendix_recursions(&RecursionCase::rate_defined(&p)?, 50)?.max();
            let alt = verify_appendix_recursions(&RecursionCase::alternative(&p), 50)?.max();
            report
                .residual(&format!("{tag}:algebra"), algebra)
                .residual(&format!("{tag}:recursion_rate_defined"), rate)
                .residual(&format!("{tag}:recursion_alternative"), alt);
            worst = worst.max(algebra).max(rate).max(alt);
        }
    }
    report.push_exact("max_residual", worst);
    Ok(Outcome { pass: worst < 1e-12, summary: format!("max residual {worst:.2e} (< 1e-12)"), report })
}

fn triple_oracle() -> Result<Outcome> {
    let mut report = Report::new("oracle", None);
    report.param("n_max", 40);
    let mut worst: f64 = 0.0;
    for ell in [2, 4, 6] {
        for q in [0.0, 0.5] {
            for (ra, rb) in [(0.7, 0.3), (0.9, 0.2)] {
                let p = densities(ra, rb, q).with_ell(ell);
                let master = stationary_solve(&build_generator(&p)?)?;
                let mpa = build_representation(&p, 40)?;
                let product: Vec<f64> =
                    (0..1usize << ell).map(|k| mpa.stationary_probability(&tau_from_index(k, ell))).collect();
                let walks = enumerate_walk_measure(&p, 40)?.marginal;
                let d = max_abs_difference(&master, &product)
                    .max(max_abs_difference(&master, &walks))
                    .max(max_abs_difference(&product, &walks));
                report.residual(&format!("ell={ell},q={q},rho_a={ra},rho_b={rb}"), d);
                worst = worst.max(d);
            }
        }
    }
    report.push_exact("max_abs_difference", worst);
    Ok(Outcome { pass: worst < 1e-10, summary: format!("max pairwise difference {worst:.2e} (< 1e-10)"), report })
}

fn dynamics_stationarity() -> Result<Outcome> {
    const SEED: u64 = 3003;
    const SNAPSHOTS: usize = 10_000;
    const EVENTS: f64 = 1e6;
    let p = densities(0.7, 0.3, 0.5).with_ell(4);
    let exact = stationary_solve(&build_generator(&p)?)?;
    // spacing chosen so the run takes about EVENTS events at stationarity
    let mean_rate: f64 = (0..16)
        .map(|k| exact[k] * EventTable::build(&Configuration::new(tau_from_index(k, 4)), &p).total())
        .sum();
    let thin = EVENTS / (SNAPSHOTS as f64 * mean_rate);
    let stream = RandomStream::new(SEED, 0);
    let table = build_partition_table(&p, adapt_truncation(&p, 4, 1e-12)?)?;
    let initial = Configuration::new(sample_joint(&table, &mut stream.derive(0)).tau());
    let run = sample_stationary_dynamics(&p, initial, 0.0, SNAPSHOTS, thin, &mut stream.derive(1))?;
    let mut freq = [0.0; 16];
    for s in &run.snapshots {
        freq[s.index()] += 1.0 / SNAPSHOTS as f64;
    }
    let tv = 0.5 * freq.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let bound = 4.0 * (16.0 / SNAPSHOTS as f64).sqrt();
    let mut report = Report::new("dynamics", Some(SEED));
    report.param("ell", 4).param("snapshots", SNAPSHOTS).param("thin", thin).param("events", run.events);
    report.push_exact("total_variation", tv);
    Ok(Outcome {
        pass: tv < bound,
        summary: format!("TV {tv:.4} (< {bound:.2}) over {} events", run.events),
        report,
    })
}

fn sampler_exactness() -> Result<Outcome> {
    const SEED: u64 = 4004;
    const SAMPLES: u64 = 1_000_000;
    let p = densities(0.7, 0.3, 0.5).with_ell(6);
    let en = enumerate_walk_measure(&p, 40)?;
    let index: HashMap<&[u32], usize> = (0..en.len()).map(|k| (en.walk(k), k)).collect();
    let table = build_partition_table(&p, 40)?;
    let stream = RandomStream::new(SEED, 0);
    let draws: Vec<(Option<usize>, bool)> = (0..SAMPLES)
        .into_par_iter()
        .map(|i| {
            let jw = sample_joint(&table, &mut stream.derive(i));
            let tau = jw.tau();
            let identity = jw.is_valid()
                && (1..jw.n.len()).all(|i| {
                    let dn = i64::from(jw.n[i]) - i64::from(jw.n[i - 1]);
                    let sigma = jw.m[i] - jw.m[i - 1];
                    (dn == 0) == (sigma != 0) && dn + sigma == 2 * i64::from(tau[i - 1]) - 1
                });
            (index.get(jw.n.as_slice()).copied(), identity)
        })
        .collect();
    let identity_failures = draws.iter().filter(|d| !d.1).count();
    let unknown = draws.iter().filter(|d| d.0.is_none()).count();
    let mut counts = vec![0.0; en.len()];
    for k in draws.iter().filter_map(|d| d.0) {
        counts[k] += 1.0;
    }
    // pool cells with expected count below 5
    let n = SAMPLES as f64;
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (obs, nu) in counts.iter().zip(&en.nu) {
        let exp = n * nu;
        if exp < 5.0 {
            pooled_obs += obs;
            pooled_exp += exp;
        } else {
            stat += (obs - exp).powi(2) / exp;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let p_value = stats::chi_square_p_value(stat, cells - 1);
    let mut report = Report::new("walks", Some(SEED));
    report.param("ell", 6).param("n_max", 40).param("samples", SAMPLES).param("cells", cells);
    report.push_exact("chi_square", stat).push_exact("p_value", p_value);
    report.push_exact("identity_failures", identity_failures as f64).push_exact("unknown_walks", unknown as f64);
    Ok(Outcome {
        pass: p_value > 0.001 && identity_failures == 0 && unknown == 0,
        summary: format!(
            "chi-square {stat:.1} on {} dof, p = {p_value:.3} (> 0.001); identity failures {identity_failures}",
            cells - 1
        ),
        report,
    })
}

fn continuum_trivial() -> Result<Outcome> {
    const SEED: u64 = 5005;
    let spec = EnsembleSpec::new(0.0, 0.0, 1.0, 1024, 100_000, Field::H).with_record(8);
    let ens = continuum::sample_ensemble(&spec, &RandomStream::new(SEED, 0))?;
    let mut report = Report::new("kpz-sample", Some(SEED));
    report.param("u", 0.0).param("v", 0.0).param("L", 1.0).param("grid", 1024).param("samples", 100_000);
    let var_h = ens.variance(&ens.field_at(8))?;
    report.push("var_H_L", var_h);
    let mut pass = (var_h.estimate - 1.0).abs() < 4.0 * var_h.stderr;
    let mut worst_z: f64 = 0.0;
    let points = [1, 2, 4, 6, 8];
    let grid = spec.record_grid();
    for (a, &i) in points.iter().enumerate() {
        for &j in &points[a..] {
            let cov = ens.covariance(&ens.column(|m| m.x[i]), &ens.column(|m| m.x[j]))?;
            let target = grid.x(i).min(grid.x(j)) / 2.0;
            let z = (cov.estimate - target).abs() / cov.stderr;
            worst_z = worst_z.max(z);
            report.push(format!("cov_X_{i}_{j}"), cov);
        }
    }
    pass &= worst_z < 4.0;
    report.diagnostics.ess = Some(ens.ess);
    Ok(Outcome {
        pass,
        summary: format!(
            "Var H(L) = {:.4} +/- {:.4}; worst covariance deviation {worst_z:.2} SE (< 4)",
            var_h.estimate, var_h.stderr
        ),
        report,
    })
}

fn zero_mode_law() -> Result<Outcome> {
    const SEED: u64 = 6006;
    let spec = EnsembleSpec::new(1.5, 0.5, 1.0, 1024, 100_000, Field::U).with_record(1);
    let ens = continuum::sample_ensemble(&spec, &RandomStream::new(SEED, 0))?;
    let g = ens.column(|m| m.zero_mode.expect("U ensemble").gamma);
    let law = Gamma::new(2.0, 1.0).expect("valid gamma");
    let d = stats::ks_statistic(&g, Some(&ens.weights), |x| law.cdf(x))?;
    let critical = stats::ks_critical(0.001, ens.ess);
    let mut report = Report::new("kpz-sample", Some(SEED));
    report.param("u", 1.5).param("v", 0.5).param("L", 1.0).param("samples", 100_000);
    report.push_exact("ks_statistic", d).push_exact("ks_critical", critical);
    report.diagnostics.ess = Some(ens.ess);
    Ok(Outcome {
        pass: d < critical,
        summary: format!("KS {d:.4} (< {critical:.4} at ESS {:.0})", ens.ess),
        report,
    })
}

fn reversal_symmetry() -> Result<Outcome> {
    const SEED: u64 = 7007;
    let stream = RandomStream::new(SEED, 0);
    let forward = continuum::sample_x_ensemble(EnsembleSpec::new(2.0, 1.0, 1.0, 1024, 100_000, Field::X).with_record(2), &stream.derive(0))?;
    let swapped = continuum::sample_x_ensemble(EnsembleSpec::new(1.0, 2.0, 1.0, 1024, 100_000, Field::X).with_record(2), &stream.derive(1))?;
    let reversed: Vec<f64> = swapped.paths().iter().map(|p| p.reversed().end()).collect();
    let end = forward.field_at(2);
    let (m1, m2) = (forward.mean(&end)?, swapped.mean(&reversed)?);
    let (v1, v2) = (forward.variance(&end)?, swapped.variance(&reversed)?);
    let (zm, zv) = (z_score(m1, m2), z_score(v1, v2));
    let mut report = Report::new("kpz-sample", Some(SEED));
    report.param("L", 1.0).param("grid", 1024).param("samples", 100_000);
    report
        .push("mean_X_L(2,1)", m1)
        .push("mean_reversed_X_L(1,2)", m2)
        .push("var_X_L(2,1)", v1)
        .push("var_reversed_X_L(1,2)", v2);
    Ok(Outcome {
        pass: zm < 4.0 && zv < 4.0,
        summary: format!(
            "mean {:.4} vs {:.4} ({zm:.2} SE); variance {:.4} vs {:.4} ({zv:.2} SE)",
            m1.estimate, m2.estimate, v1.estimate, v2.estimate
        ),
        report,
    })
}

fn discrete_to_continuum() -> Result<Outcome> {
    const SEED: u64 = 8008;
    let spec = ConvergenceSpec {
        u: 1.0,
        v: 1.0,
        length: 1.0,
        epsilons: vec![0.4, 0.2, 0.1],
        samples: 100_000,
        m: 1024,
        continuum_samples: 100_000,
        rel_tol: 1e-12,
    };
    let t = continuum::convergence_study(&spec, &RandomStream::new(SEED, 0))?;
    let ex = t.extrapolated.clone().expect("three epsilons");
    let mut report = Report::new("converge", Some(SEED));
    report.param("u", 1.0).param("v", 1.0).param("L", 1.0).param("epsilons", &spec.epsilons);
    for (k, name) in t.observables.iter().enumerate() {
        for row in &t.rows {
            report.push(format!("{name}@{}", row.epsilon), row.values[k]);
        }
        report.push(format!("{name}@extrapolated"), ex[k]).push(format!("{name}@continuum"), t.continuum[k]);
    }
    let z_mean = z_score(ex[0], t.continuum[0]);
    let z_var = z_score(ex[1], t.continuum[1]);
    let z_v = (ex[3].estimate - 0.5).abs() / ex[3].stderr;
    Ok(Outcome {
        pass: z_mean < 4.0 && z_var < 4.0 && z_v < 4.0,
        summary: format!(
            "mean H {:.4} vs {:.4} ({z_mean:.2} SE); Var H {:.4} vs {:.4} ({z_var:.2} SE); Var V {:.4} vs 0.5 ({z_v:.2} SE)",
            ex[0].estimate, t.continuum[0].estimate, ex[1].estimate, t.continuum[1].estimate, ex[3].estimate
        ),
        report,
    })
}

fn render(outcome: &Result<Outcome>) -> Option<String> {
    outcome.as_ref().ok().and_then(|o| o.report.to_json().ok())
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "algebra and recursion residuals", limit_seconds: 1.0, run: algebra_suite },
        Criterion { id: 2, name: "triple-oracle equivalence", limit_seconds: 30.0, run: triple_oracle },
        Criterion { id: 3, name: "dynamics stationarity", limit_seconds: 10.0, run: dynamics_stationarity },
        Criterion { id: 4, name: "walk sampler exactness", limit_seconds: 20.0, run: sampler_exactness },
        Criterion { id: 5, name: "continuum trivial case", limit_seconds: 30.0, run: continuum_trivial },
        Criterion { id: 6, name: "zero-mode law", limit_seconds: 60.0, run: zero_mode_law },
        Criterion { id: 7, name: "reversal symmetry", limit_seconds: 60.0, run: reversal_symmetry },
        Criterion { id: 8, name: "discrete-to-continuum convergence", limit_seconds: 600.0, run: discrete_to_continuum },
    ];
    let mut all_pass = true;
    let mut first = Vec::new();
    for c in &criteria {
        let started = Instant::now();
        let outcome = (c.run)();
        let elapsed = started.elapsed().as_secs_f64();
        let (pass, summary) = match &outcome {
            Ok(o) => (o.pass && elapsed < c.limit_seconds, o.summary.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        all_pass &= pass;
        println!(
            "criterion {} ({}): {}: {summary}; {elapsed:.2}s of {}s",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            c.limit_seconds
        );
        first.push(render(&outcome));
    }

    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().expect("thread pool");
    let second: Vec<Option<String>> = pool.install(|| criteria.iter().map(|c| render(&(c.run)())).collect());
    let mismatched: Vec<u32> = criteria
        .iter()
        .zip(first.iter().zip(&second))
        .filter(|(_, (a, b))| a.is_none() || a != b)
        .map(|(c, _)| c.id)
        .collect();
    let pass = mismatched.is_empty();
    all_pass &= pass;
    println!(
        "criterion 9 (determinism): {}: {}; rerun on 2 threads in {:.2}s",
        if pass { "PASS" } else { "FAIL" },
        if pass { "reports 1-8 byte-identical".to_string() } else { format!("reports differ for {mismatched:?}") },
        started.elapsed().as_secs_f64()
    );
    if !all_pass {
        std::process::exit(1);
    }
}
