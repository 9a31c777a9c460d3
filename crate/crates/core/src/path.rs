use serde::Serialize;

/// `m + 1` uniform points on `[0, length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub m: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(m: usize, length: f64) -> Self {
        assert!(m >= 1 && length > 0.0, "grid needs m >= 1 and length > 0");
        Self { m, length }
    }

    pub fn dx(&self) -> f64 {
        self.length / self.m as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        self.length * k as f64 / self.m as f64
    }

    pub fn points(&self) -> usize {
        self.m + 1
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        ((x / self.length * self.m as f64).round().max(0.0) as usize).min(self.m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// Unnormalized log importance weight; 0 for exact samples.
    pub log_weight: f64,
}

impl PathSample {
    pub fn end(&self) -> f64 {
        self.values[self.grid.m]
    }

    /// Piecewise-linear resampling onto `target`.
    pub fn resample(&self, target: Grid) -> PathSample {
        PathSample {
            grid: target,
            values: interpolate(&self.values, self.grid.length, target),
            log_weight: self.log_weight,
        }
    }

    /// `x -> X(L - x) - X(L)`, the space-reversed increment path.
    pub fn reversed(&self) -> PathSample {
        let end = self.end();
        PathSample {
            grid: self.grid,
            values: self.values.iter().rev().map(|v| v - end).collect(),
            log_weight: self.log_weight,
        }
    }
}

/// Linear interpolation of equally spaced `values` on `[0, length]` at the points of `target`.
pub fn interpolate(values: &[f64], length: f64, target: Grid) -> Vec<f64> {
    let n = values.len() - 1;
    debug_assert!((target.length - length).abs() <= 1e-12 * length);
    (0..=target.m)
        .map(|k| {
            let s = k as f64 * n as f64 / target.m as f64;
            let i = (s.floor() as usize).min(n.saturating_sub(1));
            if n == 0 {
                return values[0];
            }
            let f = s - i as f64;
            (1.0 - f) * values[i] + f * values[i + 1]
        })
        .collect()
}
