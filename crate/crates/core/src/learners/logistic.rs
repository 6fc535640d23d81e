use nalgebra::{DMatrix, DVector};

use super::linear::{expand, solve_normal, Degree};
use super::{expit, Model, EPS_P};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const DEVIANCE_TOL: f64 = 1e-10;
/// Coefficients beyond this magnitude are taken as evidence of separation.
const COEF_CAP: f64 = 30.0;

/// Logistic regression fitted by iteratively reweighted least squares.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    degree: Degree,
    coefficients: DVector<f64>,
    iterations: usize,
    converged: bool,
    separated: bool,
}

impl LogisticModel {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Set when a coefficient hit the cap; predictions are still usable (clipped).
    pub fn separated(&self) -> bool {
        self.separated
    }
}

impl Model for LogisticModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (expand(x, self.degree) * &self.coefficients)
            .iter()
            .map(|&eta| expit(eta).clamp(EPS_P, 1.0 - EPS_P))
            .collect()
    }
}

fn deviance(t: &[f64], p: &[f64]) -> f64 {
    -2.0 * t
        .iter()
        .zip(p)
        .map(|(&t, &p)| {
            let p = p.clamp(1e-300, 1.0 - 1e-16);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum::<f64>()
}

/// Fits `P(t = 1 | x)` for targets in `[0, 1]`; fractional targets give the quasi-likelihood fit.
pub fn fit_logistic_irls(x: &DMatrix<f64>, t: &[f64], degree: Degree) -> Result<LogisticModel> {
    if x.nrows() != t.len() || t.is_empty() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} targets",
            x.nrows(),
            t.len()
        )));
    }
    if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("logistic target {bad} outside [0, 1]")));
    }
    let design = expand(x, degree);
    let (n, k) = design.shape();
    let target = DVector::from_column_slice(t);

    let mut beta = DVector::zeros(k);
    let mean = (t.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    beta[0] = (mean / (1.0 - mean)).ln();

    let mut eta = &design * &beta;
    let mut p: Vec<f64> = eta.iter().map(|&v| expit(v)).collect();
    let mut dev = deviance(t, &p);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        iterations += 1;
        let weights: Vec<f64> = p.iter().map(|&v| (v * (1.0 - v)).max(1e-10)).collect();
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let xtwx = design.tr_mul(&weighted);
        let resid = &target - DVector::from_vec(p.clone());
        let grad = design.tr_mul(&resid);
        let (step, _) = solve_normal(xtwx, &grad).ok_or(Error::Rank { rows: n, cols: k })?;
        beta += step;
        if beta.iter().any(|b| b.abs() > COEF_CAP) {
            beta.apply(|b| *b = b.clamp(-COEF_CAP, COEF_CAP));
            separated = true;
        }
        eta = &design * &beta;
        p = eta.iter().map(|&v| expit(v)).collect();
        let new_dev = deviance(t, &p);
        let change = (dev - new_dev).abs();
        dev = new_dev;
        if separated {
            break;
        }
        if change <= DEVIANCE_TOL * (dev.abs() + 1.0) {
            converged = true;
            break;
        }
    }
    Ok(LogisticModel {
        degree,
        coefficients: beta,
        iterations,
        converged,
        separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn constant_feature_gives_sample_proportion() {
        let t = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let m = fit_logistic_irls(&col(&[2.0; 8]), &t, Degree::Main).unwrap();
        for v in m.predict(&col(&[2.0, 2.0])) {
            assert!((v - 0.625).abs() < 1e-6, "{v}");
        }
        assert!(!m.separated());
    }

    #[test]
    fn fractional_targets() {
        let x = col(&[-1.0, 0.0, 1.0, 2.0]);
        let m = fit_logistic_irls(&x, &[0.5; 4], Degree::Quadratic).unwrap();
        assert!(m.converged());
        for v in m.predict(&x) {
            assert!((v - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn separation_is_flagged_and_clipped() {
        let x = col(&[-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]);
        let t = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = fit_logistic_irls(&x, &t, Degree::Main).unwrap();
        assert!(m.separated());
        let pred = m.predict(&col(&[-5.0, 5.0]));
        assert_eq!(pred, vec![EPS_P, 1.0 - EPS_P]);
    }

    #[test]
    fn recovers_known_coefficients() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = xs
            .iter()
            .map(|&x| f64::from(rng.random::<f64>() < expit(0.5 - 1.0 * x)))
            .collect();
        let m = fit_logistic_irls(&col(&xs), &t, Degree::Main).unwrap();
        assert!(m.converged());
        assert!((m.coefficients()[0] - 0.5).abs() < 0.06);
        assert!((m.coefficients()[1] + 1.0).abs() < 0.06);
    }

    #[test]
    fn rejects_out_of_range_targets() {
        assert!(fit_logistic_irls(&col(&[0.0, 1.0]), &[0.0, 1.5], Degree::Main).is_err());
    }
}
