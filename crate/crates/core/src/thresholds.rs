//! Pass/fail thresholds of the convergence, bound and regime experiments.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{GapReport, Metric, RegimeCase, RegimeReport, SweepResult};

/// Slack subtracted from every theoretical rate.
pub const KAPPA_SLACK: f64 = 0.2;
pub const APPROX_SLOPE_MIN: f64 = 0.9;
pub const ITO_R2_SLOPE_MIN: f64 = 1.0 - KAPPA_SLACK;
pub const VS_TAIL_SLOPE_MIN: f64 = 1.0 - KAPPA_SLACK;
/// Largest tolerated fraction of paths violating an FTLE bound.
pub const GAP_VIOLATION_MAX: f64 = 0.01;
pub const STABLE_NEGATIVE_MIN: f64 = 0.95;
/// Amplitude exponents of the stable case lie below this value.
pub const STABLE_AE_MAX: f64 = -1.0;
pub const AE_QUADRATURE_TOLERANCE: f64 = 1e-6;
pub const DETERMINISTIC_TOLERANCE: f64 = 1e-8;

/// `3 − α − κ` rate of the FTLE gap with windows `T = ε^α`.
pub fn ftle_slope_min(window_exponent: f64) -> f64 {
    3.0 - window_exponent - KAPPA_SLACK
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    AtLeast,
    AtMost,
    Above,
}

/// One evaluated threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let passed = match comparison {
            Comparison::AtLeast => value >= threshold,
            Comparison::AtMost => value <= threshold,
            Comparison::Above => value > threshold,
        };
        Self { name: name.into(), value, comparison, threshold, passed }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtLeast, threshold)
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Comparison::AtMost, threshold)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.comparison {
            Comparison::AtLeast => "≥",
            Comparison::AtMost => "≤",
            Comparison::Above => ">",
        };
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {:.4e} {op} {:.4e}", self.name, self.value, self.threshold)
    }
}

fn slope_check(sweep: &SweepResult, metric: Metric, min: f64) -> Check {
    Check::at_least(format!("{metric}_slope"), sweep.slope(metric).unwrap_or(f64::NAN), min)
}

/// Rate checks of an ε-sweep.
pub fn sweep_checks(sweep: &SweepResult, window_exponent: f64) -> Vec<Check> {
    vec![
        slope_check(sweep, Metric::ApproxError, APPROX_SLOPE_MIN),
        slope_check(sweep, Metric::ItoR2, ITO_R2_SLOPE_MIN),
        slope_check(sweep, Metric::FtleGap, ftle_slope_min(window_exponent)),
    ]
}

/// Bound-violation rates, one pair per ε.
pub fn gap_checks(gaps: &[GapReport]) -> Vec<Check> {
    gaps.iter()
        .flat_map(|g| {
            [
                Check::at_most(format!("upper_violation_rate@eps={}", g.eps), g.upper_rate(), GAP_VIOLATION_MAX),
                Check::at_most(format!("lower_violation_rate@eps={}", g.eps), g.lower_rate(), GAP_VIOLATION_MAX),
            ]
        })
        .collect()
}

/// Sign checks of a regime study; exploratory cases only carry the exact
/// noise-free comparison.
pub fn regime_checks(report: &RegimeReport) -> Vec<Check> {
    match report.case {
        RegimeCase::Stable => vec![
            Check::at_least("stable_spde_negative_fraction", report.spde_negative.estimate, STABLE_NEGATIVE_MIN),
            Check::at_most("stable_ae_max", report.ae_max, STABLE_AE_MAX + AE_QUADRATURE_TOLERANCE),
        ],
        RegimeCase::Unstable => {
            vec![Check::new("unstable_spde_positive_ci_lo", report.spde_positive.lo, Comparison::Above, 0.0)]
        }
        RegimeCase::Deterministic => vec![Check::at_most(
            "deterministic_closed_form_error",
            report.deterministic_error.unwrap_or(f64::NAN),
            DETERMINISTIC_TOLERANCE,
        )],
        RegimeCase::Ergodic => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons() {
        assert!(Check::at_least("a", 0.9, 0.9).passed);
        assert!(!Check::at_least("a", f64::NAN, 0.9).passed);
        assert!(Check::at_most("a", 0.01, 0.01).passed);
        assert!(!Check::new("a", 0.0, Comparison::Above, 0.0).passed);
        assert!((ftle_slope_min(0.5) - 2.3).abs() < 1e-15);
        assert!((APPROX_SLOPE_MIN - 0.9).abs() < 1e-15);
    }

    #[test]
    fn display_names_status() {
        let c = Check::at_most("rate", 0.5, 0.01);
        assert!(c.to_string().starts_with("FAIL rate: 5.0000e-1 ≤"));
    }
}
