//! Ensemble summaries, log-log slope fits and binomial confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};

/// Median and 5%/95% quantiles of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

impl Summary {
    /// Summary of the finite values in `xs`; `None` if there are none.
    pub fn of(xs: &[f64]) -> Option<Self> {
        let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        let samples = finite.len();
        let mut data = Data::new(finite);
        Some(Self { samples, median: data.median(), q05: data.quantile(0.05), q95: data.quantile(0.95) })
    }
}

/// Least-squares line `log y = intercept + slope · log x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence band of the slope.
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub points: usize,
}

/// Fit on the log-log scale; needs at least three positive points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::FitFailed(format!("slope fit needs ≥ 3 positive points, got {n}")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitFailed("abscissae are all equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let dof = nf - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::FitFailed(e.to_string()))?.inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, slope_lo: slope - t * se, slope_hi: slope + t * se, points: n })
}

/// Wilson score interval for a binomial proportion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub const Z95: f64 = 1.959_963_984_540_054;

pub fn wilson(successes: usize, trials: usize) -> Proportion {
    if trials == 0 {
        return Proportion { successes, trials, estimate: f64::NAN, lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Proportion { successes, trials, estimate: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_slope() {
        let x = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(1.5)).collect();
        let f = loglog_slope(&x, &y).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.slope_hi - f.slope_lo).abs() < 1e-9);
    }

    #[test]
    fn slope_needs_three_points() {
        assert!(loglog_slope(&[0.1, 0.2], &[1.0, 2.0]).is_err());
        assert!(loglog_slope(&[0.1, 0.2, 0.4], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn noisy_slope_band_covers_truth() {
        let x = [0.2, 0.1, 0.05, 0.025, 0.0125];
        let wiggle = [1.05, 0.96, 1.02, 0.97, 1.03];
        let y: Vec<f64> = x.iter().zip(wiggle).map(|(e, w)| w * e).collect();
        let f = loglog_slope(&x, &y).unwrap();
        assert!(f.slope_lo < 1.0 && 1.0 < f.slope_hi);
    }

    #[test]
    fn wilson_examples() {
        let w = wilson(0, 50);
        assert_eq!(w.lo, 0.0);
        assert!(w.hi > 0.05 && w.hi < 0.09);
        let w = wilson(25, 50);
        assert!((w.estimate - 0.5).abs() < 1e-15);
        assert!((w.lo + w.hi - 1.0).abs() < 1e-12);
        let w = wilson(10, 100);
        assert!((w.lo - 0.0552).abs() < 1e-3 && (w.hi - 0.1744).abs() < 1e-3);
    }

    #[test]
    fn summary_ignores_non_finite() {
        let s = Summary::of(&[1.0, f64::NAN, 3.0, 2.0, f64::INFINITY]).unwrap();
        assert_eq!(s.samples, 3);
        assert_eq!(s.median, 2.0);
        assert!(Summary::of(&[f64::NAN]).is_none());
    }
}
