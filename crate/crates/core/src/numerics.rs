//! Log-space helpers.

/// `log(sum(exp(values)))`; `-inf` for empty input or all `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Vector stored as `exp(log_scale) * values`, renormalized so that the
/// largest entry has magnitude 1.
#[derive(Debug, Clone)]
pub struct ScaledVec {
    pub values: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledVec {
    pub fn new(values: Vec<f64>) -> Self {
        let mut v = Self { values, log_scale: 0.0 };
        v.renormalize();
        v
    }

    pub fn renormalize(&mut self) {
        let m = self.values.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if m > 0.0 && m.is_finite() {
            for x in &mut self.values {
                *x /= m;
            }
            self.log_scale += m.ln();
        }
    }

    /// `log |<self, other>|`, or `-inf` if the product vanishes.
    pub fn log_dot(&self, other: &ScaledVec) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        if s == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + other.log_scale + s.abs().ln()
        }
    }
}
