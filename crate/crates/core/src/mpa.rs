//! Truncated bidiagonal representation of the matrix product ansatz.
//!
//! `D` is upper bidiagonal and `E` lower bidiagonal in the basis `|n>`,
//! `n >= 1`. Arrays are 0-based: index `k` holds the coefficient for
//! `n = k + 1`. All products are evaluated as vector times bidiagonal
//! matrix, with per-step rescaling, so the cost is `O(ell * n_max)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::ScaledVec;
use crate::params::{q_int, q_pochhammer, ModelParams};

/// Largest cutoff that `adapt_truncation` will try.
pub const MAX_N_MAX: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedMpa {
    pub n_max: usize,
    pub q: f64,
    /// `D[n][n]`.
    pub diag_d: Vec<f64>,
    /// `D[n][n+1]`.
    pub off_d: Vec<f64>,
    /// `E[n][n]`.
    pub diag_e: Vec<f64>,
    /// `E[n+1][n]`.
    pub off_e: Vec<f64>,
    /// `<W|n>`.
    pub w: Vec<f64>,
    /// `<n|V>`.
    pub v: Vec<f64>,
    pub d: f64,
    pub e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Letter {
    D,
    E,
    Sum,
}

fn check_n_max(n_max: usize) -> Result<()> {
    if n_max < 2 {
        return Err(Error::InvalidParameter(format!("n_max must be at least 2, got {n_max}")));
    }
    if n_max > MAX_N_MAX {
        return Err(Error::GuardExceeded(format!("n_max={n_max} above {MAX_N_MAX}")));
    }
    Ok(())
}

/// Liggett specialization (`d = e = q`).
pub fn build_representation(params: &ModelParams, n_max: usize) -> Result<TruncatedMpa> {
    if !params.liggett {
        return Err(Error::NotLiggett);
    }
    params.check_normalizable()?;
    check_n_max(n_max)?;
    let q = params.q;
    let qn: Vec<f64> = (1..=n_max as u32 + 1).map(|n| q_int(n, q)).collect();
    let rw = (1.0 - params.rho_a) / params.rho_a;
    let rv = params.rho_b / (1.0 - params.rho_b);
    Ok(TruncatedMpa {
        n_max,
        q,
        diag_d: qn[..n_max].to_vec(),
        off_d: qn[..n_max].to_vec(),
        diag_e: qn[..n_max].to_vec(),
        off_e: qn[1..].to_vec(),
        w: (1..=n_max as i32).map(|n| rw.powi(n)).collect(),
        v: (1..=n_max as i32).map(|n| rv.powi(n) * qn[n as usize - 1]).collect(),
        d: q,
        e: q,
    })
}

/// `(d, e)` fixed by the rates so that `w_n` is geometric and `v_n` has the
/// q-Pochhammer closed form.
pub fn rate_defined_pair(params: &ModelParams) -> Result<(f64, f64)> {
    if params.alpha <= 0.0 || params.beta <= 0.0 {
        return Err(Error::InvalidParameter("alpha and beta must be positive".into()));
    }
    let e = params.gamma / params.alpha * params.rho_a / (1.0 - params.rho_a);
    let d = params.delta * (1.0 - params.rho_b) / (params.beta * params.rho_b);
    Ok((d, e))
}

/// The other simple `(d, e)` pair for which the same closed forms hold.
pub fn alternative_pair(params: &ModelParams) -> (f64, f64) {
    (params.rho_a / (params.rho_a - 1.0), (params.rho_b - 1.0) / params.rho_b)
}

/// General family parameterized by `(d, e)`.
pub fn build_general_representation(params: &ModelParams, d: f64, e: f64, n_max: usize) -> Result<TruncatedMpa> {
    if params.alpha <= 0.0 || params.beta <= 0.0 {
        return Err(Error::InvalidParameter("alpha and beta must be positive".into()));
    }
    params.check_normalizable()?;
    check_n_max(n_max)?;
    let q = params.q;
    let k = 1.0 - q;
    let qpow = |m: i32| q.powi(m);
    let rw = (1.0 - params.rho_a) / params.rho_a;
    let rv = params.rho_b / (1.0 - params.rho_b);
    let mut tm = TruncatedMpa {
        n_max,
        q,
        diag_d: Vec::with_capacity(n_max),
        off_d: Vec::with_capacity(n_max),
        diag_e: Vec::with_capacity(n_max),
        off_e: Vec::with_capacity(n_max),
        w: Vec::with_capacity(n_max),
        v: Vec::with_capacity(n_max),
        d,
        e,
    };
    // running (ed; q)_{n-1} / (q; q)_{n-1}
    let mut ratio = 1.0;
    for n in 1..=n_max as i32 {
        tm.diag_d.push((1.0 - d * qpow(n - 1)) / k);
        tm.off_d.push((1.0 - qpow(n)) / k);
        tm.diag_e.push((1.0 - e * qpow(n - 1)) / k);
        tm.off_e.push((1.0 - d * e * qpow(n - 1)) / k);
        tm.w.push(rw.powi(n));
        tm.v.push(rv.powi(n) * ratio);
        ratio *= (1.0 - e * d * qpow(n - 1)) / (1.0 - qpow(n));
    }
    Ok(tm)
}

impl TruncatedMpa {
    /// Row vector times matrix, in place.
    fn left_mul(&self, x: &mut ScaledVec, letter: Letter, buf: &mut Vec<f64>) {
        let n = self.n_max;
        buf.clear();
        buf.resize(n, 0.0);
        let xs = &x.values;
        for k in 0..n {
            let mut acc = 0.0;
            if letter != Letter::E {
                acc += xs[k] * self.diag_d[k];
                if k > 0 {
                    acc += xs[k - 1] * self.off_d[k - 1];
                }
            }
            if letter != Letter::D {
                acc += xs[k] * self.diag_e[k];
                if k + 1 < n {
                    acc += xs[k + 1] * self.off_e[k];
                }
            }
            buf[k] = acc;
        }
        std::mem::swap(&mut x.values, buf);
        x.renormalize();
    }

    /// Matrix times column vector, in place.
    fn right_mul(&self, y: &mut ScaledVec, letter: Letter, buf: &mut Vec<f64>) {
        let n = self.n_max;
        buf.clear();
        buf.resize(n, 0.0);
        let ys = &y.values;
        for k in 0..n {
            let mut acc = 0.0;
            if letter != Letter::E {
                acc += self.diag_d[k] * ys[k];
                if k + 1 < n {
                    acc += self.off_d[k] * ys[k + 1];
                }
            }
            if letter != Letter::D {
                acc += self.diag_e[k] * ys[k];
                if k > 0 {
                    acc += self.off_e[k - 1] * ys[k - 1];
                }
            }
            buf[k] = acc;
        }
        std::mem::swap(&mut y.values, buf);
        y.renormalize();
    }

    fn bra_w(&self) -> ScaledVec {
        ScaledVec::new(self.w.clone())
    }

    fn ket_v(&self) -> ScaledVec {
        ScaledVec::new(self.v.clone())
    }

    /// `log <W| prod_i (D tau_i + E (1 - tau_i)) |V>`.
    pub fn log_weight(&self, tau: &[bool]) -> f64 {
        let mut x = self.bra_w();
        let mut buf = Vec::new();
        for &b in tau {
            self.left_mul(&mut x, if b { Letter::D } else { Letter::E }, &mut buf);
        }
        x.log_dot(&self.ket_v())
    }

    /// `log Z_ell = log <W|(D+E)^ell|V>`.
    pub fn log_normalization(&self, ell: usize) -> f64 {
        let mut x = self.bra_w();
        let mut buf = Vec::new();
        for _ in 0..ell {
            self.left_mul(&mut x, Letter::Sum, &mut buf);
        }
        x.log_dot(&self.ket_v())
    }

    pub fn stationary_probability(&self, tau: &[bool]) -> f64 {
        (self.log_weight(tau) - self.log_normalization(tau.len())).exp()
    }

    /// `Z_ell`; may overflow to infinity for long systems, see [`Self::log_normalization`].
    pub fn normalization(&self, ell: usize) -> f64 {
        self.log_normalization(ell).exp()
    }

    /// Stationary current `Z_{ell-1} / Z_ell`.
    pub fn current(&self, ell: usize) -> Result<f64> {
        if ell == 0 {
            return Err(Error::InvalidParameter("current needs ell >= 1".into()));
        }
        // one pass: record log Z_{ell-1} on the way
        let mut x = self.bra_w();
        let v = self.ket_v();
        let mut buf = Vec::new();
        for _ in 0..ell - 1 {
            self.left_mul(&mut x, Letter::Sum, &mut buf);
        }
        let prev = x.log_dot(&v);
        self.left_mul(&mut x, Letter::Sum, &mut buf);
        Ok((prev - x.log_dot(&v)).exp())
    }

    /// `<tau_i>` for `i = 1..=ell`.
    pub fn density_profile(&self, ell: usize) -> Vec<f64> {
        let mut buf = Vec::new();
        // backward[j] = (D+E)^j |V>
        let mut backward = Vec::with_capacity(ell);
        let mut y = self.ket_v();
        for _ in 0..ell {
            backward.push(y.clone());
            self.right_mul(&mut y, Letter::Sum, &mut buf);
        }
        let log_z = self.bra_w().log_dot(&y);
        let mut x = self.bra_w();
        let mut profile = Vec::with_capacity(ell);
        for i in 1..=ell {
            let mut xd = x.clone();
            self.left_mul(&mut xd, Letter::D, &mut buf);
            profile.push((xd.log_dot(&backward[ell - i]) - log_z).exp());
            self.left_mul(&mut x, Letter::Sum, &mut buf);
        }
        profile
    }

    /// Max deviation from `D = Lambda D~`, `E = Lambda E~` with `Lambda = diag([n]_q)`
    /// and all-ones bidiagonal `D~`, `E~`.
    pub fn factorization_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for k in 0..self.n_max {
            let lam = q_int(k as u32 + 1, self.q);
            let lam_next = q_int(k as u32 + 2, self.q);
            r = r
                .max((self.diag_d[k] - lam).abs())
                .max((self.off_d[k] - lam).abs())
                .max((self.diag_e[k] - lam).abs())
                .max((self.off_e[k] - lam_next).abs());
        }
        r
    }

    fn entry(&self, letter: Letter, row: usize, col: usize) -> f64 {
        // 1-based indices inside the truncation
        let mut s = 0.0;
        if letter != Letter::E {
            if row == col {
                s += self.diag_d[row - 1];
            } else if col == row + 1 {
                s += self.off_d[row - 1];
            }
        }
        if letter != Letter::D {
            if row == col {
                s += self.diag_e[row - 1];
            } else if row == col + 1 {
                s += self.off_e[col - 1];
            }
        }
        s
    }

    /// Max over `|n - n'| <= 1` of `|<n|D|n'> - (1 + n' - n)/2 <n|D+E|n'>|`.
    pub fn walk_identity_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for n in 1..=self.n_max {
            for np in n.saturating_sub(1).max(1)..=(n + 1).min(self.n_max) {
                let factor = (1.0 + np as f64 - n as f64) / 2.0;
                let lhs = self.entry(Letter::D, n, np);
                let rhs = factor * self.entry(Letter::Sum, n, np);
                r = r.max((lhs - rhs).abs());
            }
        }
        r
    }

    /// Max coefficientwise difference to another representation.
    pub fn max_coefficient_difference(&self, other: &TruncatedMpa) -> f64 {
        let pairs = [
            (&self.diag_d, &other.diag_d),
            (&self.off_d, &other.off_d),
            (&self.diag_e, &other.diag_e),
            (&self.off_e, &other.off_e),
            (&self.w, &other.w),
            (&self.v, &other.v),
        ];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlgebraResidual {
    /// Max abs entry of `DE - qED - D - E` on the verified block.
    pub max_bulk: f64,
    /// Max componentwise relative residual of `(beta D - delta E)|V> = |V>`.
    pub max_v: f64,
    /// Max componentwise relative residual of `<W|(alpha E - gamma D) = <W|`.
    pub max_w: f64,
    /// Verified rows and columns, 1-based inclusive.
    pub verified_rows: (usize, usize),
}

impl AlgebraResidual {
    pub fn max(&self) -> f64 {
        self.max_bulk.max(self.max_v).max(self.max_w)
    }
}

/// Checks the bulk and boundary relations on rows/columns `1..=n_max-2`,
/// where truncation does not touch any entry. Boundary residuals are
/// relative to the sum of magnitudes of the terms in each component.
pub fn verify_algebra(mpa: &TruncatedMpa, params: &ModelParams) -> AlgebraResidual {
    let top = mpa.n_max.saturating_sub(2);
    let q = params.q;
    let mut max_bulk = 0.0f64;
    for i in 1..=top {
        for j in i.saturating_sub(1).max(1)..=(i + 1).min(top) {
            let mut de = 0.0;
            let mut ed = 0.0;
            for k in i.saturating_sub(1).max(1)..=i + 1 {
                de += mpa.entry(Letter::D, i, k) * mpa.entry(Letter::E, k, j);
                ed += mpa.entry(Letter::E, i, k) * mpa.entry(Letter::D, k, j);
            }
            let res = de - q * ed - mpa.entry(Letter::Sum, i, j);
            max_bulk = max_bulk.max(res.abs());
        }
    }

    let (alpha, beta, gamma, delta) = (params.alpha, params.beta, params.gamma, params.delta);
    let mut max_v = 0.0f64;
    let mut max_w = 0.0f64;
    let get = |xs: &[f64], n: usize| if n >= 1 && n <= xs.len() { xs[n - 1] } else { 0.0 };
    for n in 1..=top {
        // (beta D - delta E)|V>, component n
        let terms_v = [
            beta * get(&mpa.diag_d, n) * get(&mpa.v, n),
            beta * get(&mpa.off_d, n) * get(&mpa.v, n + 1),
            -delta * get(&mpa.diag_e, n) * get(&mpa.v, n),
            -delta * get(&mpa.off_e, n - 1) * get(&mpa.v, n - 1),
            -get(&mpa.v, n),
        ];
        max_v = max_v.max(relative(&terms_v));
        // <W|(alpha E - gamma D), component n
        let terms_w = [
            alpha * get(&mpa.w, n) * get(&mpa.diag_e, n),
            alpha * get(&mpa.w, n + 1) * get(&mpa.off_e, n),
            -gamma * get(&mpa.w, n) * get(&mpa.diag_d, n),
            -gamma * get(&mpa.w, n - 1) * get(&mpa.off_d, n - 1),
            -get(&mpa.w, n),
        ];
        max_w = max_w.max(relative(&terms_w));
    }
    AlgebraResidual { max_bulk, max_v, max_w, verified_rows: (1, top) }
}

fn relative(terms: &[f64]) -> f64 {
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    if scale == 0.0 {
        0.0
    } else {
        terms.iter().sum::<f64>().abs() / scale
    }
}

/// Inputs to the coefficient recursions. `gamma_over_alpha` and
/// `delta_over_beta` enter the boundary-vector recursions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionCase {
    pub q: f64,
    pub d: f64,
    pub e: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub gamma_over_alpha: f64,
    pub delta_over_beta: f64,
}

impl RecursionCase {
    /// `(d, e)` chosen from the rates.
    pub fn rate_defined(params: &ModelParams) -> Result<Self> {
        let (d, e) = rate_defined_pair(params)?;
        Ok(Self::with_pair(params, d, e))
    }

    pub fn alternative(params: &ModelParams) -> Self {
        let (d, e) = alternative_pair(params);
        Self::with_pair(params, d, e)
    }

    pub fn with_pair(params: &ModelParams, d: f64, e: f64) -> Self {
        Self {
            q: params.q,
            d,
            e,
            rho_a: params.rho_a,
            rho_b: params.rho_b,
            gamma_over_alpha: params.gamma / params.alpha,
            delta_over_beta: params.delta / params.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionReport {
    pub n_terms: usize,
    /// `e_{n+1} = q e_n + 1 - q` and `d_{n+1} = q d_n + 1 - q`.
    pub max_diag: f64,
    /// The three coefficient equations of `DE - qED = D + E` with the chosen off-diagonals.
    pub max_bulk_system: f64,
    /// `u_n` from its recursion vs `(1 - q^n)(1 - ed q^{n-1})`.
    pub max_u: f64,
    /// `u_n = do_n eo_n` for the chosen split.
    pub max_split: f64,
    pub max_w: f64,
    pub max_v: f64,
    pub u1: f64,
    /// First few `(d_n, e_n, u_n)` for inspection.
    pub head: Vec<(f64, f64, f64)>,
}

impl RecursionReport {
    pub fn max(&self) -> f64 {
        [self.max_diag, self.max_bulk_system, self.max_u, self.max_split, self.max_w, self.max_v]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Checks the coefficient recursions of the bidiagonal ansatz for `n = 1..=n_terms`.
pub fn verify_appendix_recursions(case: &RecursionCase, n_terms: usize) -> Result<RecursionReport> {
    if n_terms < 2 {
        return Err(Error::InvalidParameter("n_terms must be at least 2".into()));
    }
    let RecursionCase { q, d, e, rho_a, rho_b, gamma_over_alpha: g, delta_over_beta: h } = *case;
    let qp = |m: i32| if m < 0 { 0.0 } else { q.powi(m) };
    // coefficients, 1-based with index 0 meaning the n = 0 convention
    let dn = |n: i32| 1.0 - d * qp(n - 1);
    let en = |n: i32| 1.0 - e * qp(n - 1);
    let don = |n: i32| if n == 0 { 0.0 } else { 1.0 - qp(n) };
    let eon = |n: i32| if n == 0 { 0.0 } else { 1.0 - d * e * qp(n - 1) };
    let un = |n: i32| (1.0 - qp(n)) * (1.0 - e * d * qp(n - 1));

    let rw = (1.0 - rho_a) / rho_a;
    let rv = rho_b / (1.0 - rho_b);
    let n_max = n_terms as i32 + 1;
    let mut wv = vec![0.0; n_max as usize + 1];
    let mut vv = vec![0.0; n_max as usize + 1];
    let mut ratio = 1.0;
    for n in 1..=n_max {
        wv[n as usize] = rw.powi(n);
        vv[n as usize] = rv.powi(n) * ratio;
        ratio *= (1.0 - e * d * qp(n - 1)) / (1.0 - qp(n));
    }
    // sanity: the running ratio is the q-Pochhammer quotient
    debug_assert!({
        let n = n_max.min(8);
        let direct = rv.powi(n) * q_pochhammer(e * d, q, (n - 1) as u32) / q_pochhammer(q, q, (n - 1) as u32);
        (direct - vv[n as usize]).abs() <= 1e-10 * direct.abs().max(1e-300)
    });

    let mut rep = RecursionReport {
        n_terms,
        max_diag: 0.0,
        max_bulk_system: 0.0,
        max_u: 0.0,
        max_split: 0.0,
        max_w: 0.0,
        max_v: 0.0,
        u1: 0.0,
        head: Vec::new(),
    };
    let mut u_rec = 0.0;
    let k = 1.0 - q;
    for n in 1..=n_terms as i32 {
        rep.max_diag = rep.max_diag.max((en(n + 1) - (q * en(n) + k)).abs()).max((dn(n + 1) - (q * dn(n) + k)).abs());

        let sys = [
            k * (dn(n) + en(n)) - (dn(n) * en(n) + don(n) * eon(n) - q * dn(n) * en(n) - q * eon(n - 1) * don(n - 1)),
            k * don(n) - (don(n) * en(n + 1) - q * en(n) * don(n)),
            k * eon(n) - (dn(n + 1) * eon(n) - q * eon(n) * dn(n)),
        ];
        rep.max_bulk_system = sys.iter().fold(rep.max_bulk_system, |m, r| m.max(r.abs()));

        u_rec = q * u_rec + k * (1.0 - e * d * qp(2 * n - 2));
        rep.max_u = rep.max_u.max((u_rec - un(n)).abs());
        rep.max_split = rep.max_split.max((don(n) * eon(n) - un(n)).abs());
        if n == 1 {
            rep.u1 = u_rec;
        }
        if n <= 5 {
            rep.head.push((dn(n), en(n), un(n)));
        }

        let i = n as usize;
        let w_terms = [
            en(n) * wv[i],
            eon(n) * wv[i + 1],
            -g * dn(n) * wv[i],
            -g * don(n - 1) * wv[i - 1],
            -(1.0 / rho_a - g / (1.0 - rho_a)) * wv[i],
        ];
        rep.max_w = rep.max_w.max(relative(&w_terms));
        let v_terms = [
            dn(n) * vv[i],
            don(n) * vv[i + 1],
            -h * en(n) * vv[i],
            -h * eon(n - 1) * vv[i - 1],
            -(1.0 / (1.0 - rho_b) - h / rho_b) * vv[i],
        ];
        rep.max_v = rep.max_v.max(relative(&v_terms));
    }
    Ok(rep)
}

/// Smallest `n_max` in the doubling schedule 16, 32, ... such that doubling
/// it changes `Z_ell` by less than `rel_tol` (relative).
pub fn adapt_truncation(params: &ModelParams, ell: usize, rel_tol: f64) -> Result<usize> {
    params.check_normalizable()?;
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter("rel_tol must be positive".into()));
    }
    let log_z = |n: usize| -> Result<f64> {
        let mpa = if params.liggett {
            build_representation(params, n)?
        } else {
            let (d, e) = rate_defined_pair(params)?;
            build_general_representation(params, d, e, n)?
        };
        Ok(mpa.log_normalization(ell))
    };
    let mut n = 16;
    let mut prev = log_z(n)?;
    for _ in 0..20 {
        if 2 * n > MAX_N_MAX {
            break;
        }
        let next = log_z(2 * n)?;
        if (next - prev).abs() < rel_tol {
            return Ok(n);
        }
        n *= 2;
        prev = next;
    }
    Err(Error::TruncationNotConverged { doublings: 20, n_max: n })
}
