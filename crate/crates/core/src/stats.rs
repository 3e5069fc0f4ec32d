//! Small regression and summary helpers shared by the checkers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
///
/// Degenerate inputs (fewer than two distinct `x`) give a zero slope and the
/// mean as intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    if x.is_empty() {
        return LinearFit {
            slope: 0.0,
            intercept: 0.0,
            r_squared: 0.0,
        };
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 {
        return LinearFit {
            slope: 0.0,
            intercept: my,
            r_squared: 0.0,
        };
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

/// Theil–Sen slope: median of pairwise slopes over pairs with distinct `x`.
/// Zero when no such pair exists.
pub fn theil_sen_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mut slopes = Vec::new();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if x[j] != x[i] {
                slopes.push((y[j] - y[i]) / (x[j] - x[i]));
            }
        }
    }
    if slopes.is_empty() {
        return 0.0;
    }
    quantile(&slopes, 0.5)
}

/// Least-squares slope of `y ≈ slope·x`.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    if sxx <= 0.0 {
        return 0.0;
    }
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx
}

/// Linear-interpolated quantile of unsorted data; `q` in `[0, 1]`.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn geomspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let (a, b) = (start.ln(), stop.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}
