//! Small numerical helpers: log-domain sums, least squares, binomial intervals.

use nalgebra::{DMatrix, DVector};

/// `log(sum exp(x_i))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Accumulates `log(sum exp(x_i))` incrementally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSum {
    max: f64,
    scaled: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        LogSum { max: f64::NEG_INFINITY, scaled: 0.0 }
    }
}

impl LogSum {
    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        self.add(other.max + other.scaled.ln());
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Least-squares coefficients for `rows * c ~ ys`; `None` when rank deficient.
pub fn least_squares(rows: &[Vec<f64>], ys: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len();
    let k = rows.first()?.len();
    if n < k {
        return None;
    }
    let a = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return None;
    }
    svd.solve(&b, 0.0).ok().map(|c| c.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
    let c = least_squares(&rows, ys)?;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - c[0] - c[1] * x).powi(2)).sum();
    Some(LineFit { slope: c[1], intercept: c[0], rms_residual: (rss / xs.len() as f64).sqrt() })
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// 97.5% normal quantile.
pub const Z95: f64 = 1.959963984540054;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let xs = [0.1, -2.0, 3.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        let mut acc = LogSum::default();
        for x in xs {
            acc.add(x);
        }
        assert!((acc.value() - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn lse_survives_underflow() {
        let v = log_sum_exp(&[-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn line_fit_exact() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_contains_p() {
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!(lo < 0.5 && hi > 0.5);
        let (lo, hi) = wilson_interval(0, 100, Z95);
        assert!(lo < 1e-12);
        assert!(hi > 0.0 && hi < 0.05);
    }
}
