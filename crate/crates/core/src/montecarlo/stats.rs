use serde::Serialize;

use crate::{Error, Result};

fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(sample_a: &[f64], sample_b: &[f64]) -> f64 {
    assert!(!sample_a.is_empty() && !sample_b.is_empty(), "KS needs non-empty samples");
    let (a, b) = (sorted_copy(sample_a), sorted_copy(sample_b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_distance_cdf<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    assert!(!sample.is_empty(), "KS needs a non-empty sample");
    let s = sorted_copy(sample);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

pub fn median(x: &[f64]) -> f64 {
    let s = sorted_copy(x);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Standard error of a binomial proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    /// HC1 heteroskedasticity-robust standard error.
    pub stderr: f64,
    pub intercept: f64,
}

/// OLS slope of `log(median |error|)` on `log T`.
pub fn rate_regression(points: &[(usize, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Parameter(format!("rate regression needs at least 3 grid points, got {}", points.len())));
    }
    if let Some(&(t, _)) = points.iter().find(|(_, m)| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::Degenerate(format!("median absolute error is zero or undefined at T = {t}")));
    }
    let xs: Vec<f64> = points.iter().map(|&(t, _)| (t as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, m)| m.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let meat: f64 =
        xs.iter().zip(&ys).map(|(x, y)| ((x - mx) * (y - intercept - slope * x)).powi(2)).sum();
    let stderr = (meat * n / (n - 2.0)).sqrt() / sxx;
    Ok(RateFit { slope, stderr, intercept })
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
