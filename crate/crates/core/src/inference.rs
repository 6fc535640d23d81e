//! Wald intervals and two-sided p-values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

fn standard_normal() -> Normal {
    Normal::standard()
}

/// `Phi^{-1}(p)` for the standard normal.
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * standard_normal().sf(z.abs())).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wald {
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// Level-`alpha` Wald interval and test of `estimate = null`.
pub fn wald(estimate: f64, se: f64, null: f64, alpha: f64) -> Wald {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let p_value = if se > 0.0 {
        two_sided_p((estimate - null) / se)
    } else if estimate == null {
        1.0
    } else {
        0.0
    };
    Wald {
        ci_low: estimate - z * se,
        ci_high: estimate + z * se,
        p_value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.5)).abs() < 1e-12);
        assert!((normal_quantile(0.05) + 1.644_853_626_951_472_2).abs() < 1e-9);
    }

    #[test]
    fn p_values() {
        assert!((two_sided_p(1.959_963_984_540_054) - 0.05).abs() < 1e-10);
        assert_eq!(two_sided_p(0.0), 1.0);
        let w = wald(0.9, 0.3, 0.0, 0.05);
        assert!(w.ci_low < 0.9 && w.ci_high > 0.9);
        assert!((w.p_value - two_sided_p(3.0)).abs() < 1e-15);
        assert_eq!(wald(1.0, 0.0, 1.0, 0.05).p_value, 1.0);
        assert_eq!(wald(1.2, 0.0, 1.0, 0.05).p_value, 0.0);
    }
}
