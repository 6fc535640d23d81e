//! Efficient influence functions of the arm variances and their contrasts.

use serde::{Deserialize, Serialize};

use crate::dataset::Arm;
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFit;

/// Variances at or below this value (scaled outcome) are treated as degenerate
/// in delta-method denominators.
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EifTarget {
    Sigma2(Arm),
    Psi,
    Lambda,
}

/// Per-observation influence function values.
#[derive(Clone, Debug, PartialEq)]
pub struct EifVector {
    pub values: Vec<f64>,
    pub target: EifTarget,
}

impl EifVector {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sum_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Row-level terms shared by the one-step estimator and the influence function:
/// returns `(weighted residual term, plug-in term)` for one observation.
#[inline]
pub(crate) fn sigma2_terms(h: f64, y: f64, q1: f64, q2: f64, mu: f64) -> (f64, f64) {
    let weighted = if h == 0.0 {
        0.0
    } else {
        h * (y * y - q2 + 2.0 * mu * (q1 - y))
    };
    (weighted, q2 - 2.0 * q1 * mu)
}

/// Influence function of `sigma^2(a)` from raw components.
///
/// `h` is the clever covariate `I(A = a) / P(A = a | W)`.
pub fn eif_sigma2_values(h: &[f64], y: &[f64], q1: &[f64], q2: &[f64], mu: f64, sigma2: f64) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let (weighted, plug_in) = sigma2_terms(h[i], y[i], q1[i], q2[i], mu);
            weighted + plug_in + mu * mu - sigma2
        })
        .collect()
}

/// Influence function of `sigma^2(a)` at the nuisances in `nf`, with `mu = nf.mu(a)`.
pub fn eif_sigma2(nf: &NuisanceFit, sigma2_hat: f64, arm: Arm) -> EifVector {
    let h = nf.clever_covariate();
    EifVector {
        values: eif_sigma2_values(h.h(arm), nf.y(), nf.q1(arm), nf.q2(arm), nf.mu(arm), sigma2_hat),
        target: EifTarget::Sigma2(arm),
    }
}

fn check_floor(value: f64, arm: Arm) -> Result<()> {
    if value > VARIANCE_FLOOR {
        Ok(())
    } else {
        Err(Error::DegenerateVariance {
            arm: arm.indicator(),
            value,
        })
    }
}

fn check_aligned(e1: &EifVector, e0: &EifVector) -> Result<()> {
    if e1.values.len() != e0.values.len() {
        return Err(Error::Contract(format!(
            "influence vectors differ in length ({} vs {})",
            e1.values.len(),
            e0.values.len()
        )));
    }
    Ok(())
}

/// Delta-method influence function of `sqrt(sigma^2(1)) - sqrt(sigma^2(0))`.
pub fn eif_psi(eif1: &EifVector, eif0: &EifVector, s2_1: f64, s2_0: f64) -> Result<EifVector> {
    check_aligned(eif1, eif0)?;
    check_floor(s2_1, Arm::Treated)?;
    check_floor(s2_0, Arm::Control)?;
    let (c1, c0) = (0.5 / s2_1.sqrt(), 0.5 / s2_0.sqrt());
    Ok(EifVector {
        values: eif1
            .values
            .iter()
            .zip(&eif0.values)
            .map(|(d1, d0)| c1 * d1 - c0 * d0)
            .collect(),
        target: EifTarget::Psi,
    })
}

/// Delta-method influence function of `sigma^2(1) / sigma^2(0)`.
pub fn eif_lambda(eif1: &EifVector, eif0: &EifVector, s2_1: f64, s2_0: f64) -> Result<EifVector> {
    check_aligned(eif1, eif0)?;
    check_floor(s2_0, Arm::Control)?;
    let (c1, c0) = (1.0 / s2_0, s2_1 / (s2_0 * s2_0));
    Ok(EifVector {
        values: eif1
            .values
            .iter()
            .zip(&eif0.values)
            .map(|(d1, d0)| c1 * d1 - c0 * d0)
            .collect(),
        target: EifTarget::Lambda,
    })
}

/// `sqrt(sum_i D_i^2 / n^2)`, the influence-function standard error.
pub fn eif_se(e: &EifVector, n_total: usize) -> f64 {
    let n = n_total as f64;
    (e.sum_sq() / n / n).sqrt()
}

/// Pooled standard error over cross-fitting folds, normalised by the total sample size.
pub fn cross_fit_se(folds: &[EifVector]) -> f64 {
    let n: usize = folds.iter().map(|f| f.values.len()).sum();
    let total: f64 = folds.iter().map(EifVector::sum_sq).sum();
    (total / n as f64 / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(values: Vec<f64>, target: EifTarget) -> EifVector {
        EifVector { values, target }
    }

    #[test]
    fn degenerate_outcome_has_zero_eif() {
        let c = 0.4;
        let d = eif_sigma2_values(&[2.0, 0.0, 2.0], &[c; 3], &[c; 3], &[c * c; 3], c, 0.0);
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn off_arm_rows_keep_only_plug_in_terms() {
        let (q1, q2, mu, s2) = (0.3, 0.2, 0.35, 0.05);
        let d = eif_sigma2_values(&[0.0], &[0.9], &[q1], &[q2], mu, s2);
        assert!((d[0] - (q2 - 2.0 * q1 * mu + mu * mu - s2)).abs() < 1e-15);
    }

    #[test]
    fn two_row_hand_computation() {
        // rows (A, Y) = (1, 0.8), (0, 0.2); g = 0.5 so h(1) = (2, 0)
        let d = eif_sigma2_values(&[2.0, 0.0], &[0.8, 0.2], &[0.5, 0.5], &[0.3, 0.3], 0.5, 0.05);
        // independent scalar evaluation
        let d1 = 2.0 * (0.64 - 0.3 + 2.0 * 0.5 * (0.5 - 0.8)) + 0.3 - 2.0 * 0.5 * 0.5 + 0.25 - 0.05;
        assert!((d[0] - d1).abs() < 1e-12);
        assert!((d[0] - 0.08).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
    }

    #[test]
    fn psi_examples() {
        let e = ev(vec![0.3, -0.1], EifTarget::Sigma2(Arm::Treated));
        let z = eif_psi(&e, &e, 0.2, 0.2).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-15));

        let zero = ev(vec![0.0, 0.0], EifTarget::Sigma2(Arm::Control));
        assert_eq!(eif_psi(&e, &zero, 0.25, 0.1).unwrap().values, e.values);

        let d = eif_psi(&ev(vec![0.08], EifTarget::Psi), &ev(vec![0.02], EifTarget::Psi), 0.04, 0.01).unwrap();
        assert!((d.values[0] - 0.1).abs() < 1e-12);

        assert!(matches!(
            eif_psi(&e, &e, 0.0, 0.2),
            Err(Error::DegenerateVariance { arm: 1, .. })
        ));
    }

    #[test]
    fn lambda_examples() {
        let zero = ev(vec![0.0; 3], EifTarget::Sigma2(Arm::Control));
        assert!(eif_lambda(&zero, &zero, 0.3, 0.1).unwrap().values.iter().all(|v| *v == 0.0));

        let e = ev(vec![0.3, -0.1, 0.05], EifTarget::Sigma2(Arm::Treated));
        let d = eif_lambda(&e, &e, 0.2, 0.2).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 1e-12));

        let d = eif_lambda(&ev(vec![0.1], EifTarget::Psi), &ev(vec![0.05], EifTarget::Psi), 0.5, 0.25).unwrap();
        assert!(d.values[0].abs() < 1e-12);

        assert!(eif_lambda(&e, &e, 0.2, 1e-12).is_err());
    }

    #[test]
    fn standard_errors() {
        assert_eq!(eif_se(&ev(vec![0.0; 5], EifTarget::Psi), 5), 0.0);
        assert!((eif_se(&ev(vec![1.0, -1.0], EifTarget::Psi), 2) - 0.5f64.sqrt()).abs() < 1e-15);
        // squared sums 3 and 5, n = 8
        let f1 = ev(vec![1.0, 1.0, 1.0, 0.0], EifTarget::Psi);
        let f2 = ev(vec![2.0, 1.0, 0.0, 0.0], EifTarget::Psi);
        assert!((cross_fit_se(&[f1, f2]) - 0.125f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn contrasts_are_linear(
            rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..20),
            s1 in 0.01f64..0.25, s0 in 0.01f64..0.25, alpha in -3.0f64..3.0,
        ) {
            let a1 = ev(rows.iter().map(|r| r.0).collect(), EifTarget::Sigma2(Arm::Treated));
            let a0 = ev(rows.iter().map(|r| r.1).collect(), EifTarget::Sigma2(Arm::Control));
            let b1 = ev(rows.iter().map(|r| r.2).collect(), EifTarget::Sigma2(Arm::Treated));
            let b0 = ev(rows.iter().map(|r| r.3).collect(), EifTarget::Sigma2(Arm::Control));
            let mix = |x: &EifVector, y: &EifVector| ev(
                x.values.iter().zip(&y.values).map(|(u, v)| u + alpha * v).collect(),
                x.target,
            );
            for f in [eif_psi, eif_lambda] {
                let lhs = f(&mix(&a1, &b1), &mix(&a0, &b0), s1, s0).unwrap();
                let ra = f(&a1, &a0, s1, s0).unwrap();
                let rb = f(&b1, &b0, s1, s0).unwrap();
                for i in 0..rows.len() {
                    let rhs = ra.values[i] + alpha * rb.values[i];
                    prop_assert!((lhs.values[i] - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
                }
            }
        }
    }
}
