use nalgebra::{DMatrix, DVector};

use super::Model;
use crate::error::{Error, Result};

/// Polynomial degree of a linear design.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degree {
    /// Intercept and main terms.
    Main,
    /// Main terms plus squares and pairwise products.
    Quadratic,
}

/// Expands raw covariates into a design matrix with a leading intercept column.
pub fn expand(x: &DMatrix<f64>, degree: Degree) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let extra = match degree {
        Degree::Main => 0,
        Degree::Quadratic => p * (p + 1) / 2,
    };
    let mut design = DMatrix::zeros(n, 1 + p + extra);
    design.column_mut(0).fill(1.0);
    for j in 0..p {
        design.set_column(1 + j, &x.column(j));
    }
    if degree == Degree::Quadratic {
        let mut col = 1 + p;
        for j in 0..p {
            for k in j..p {
                let prod = x.column(j).component_mul(&x.column(k));
                design.set_column(col, &prod);
                col += 1;
            }
        }
    }
    design
}

/// Solves the symmetric positive (semi)definite system `lhs * beta = rhs`.
///
/// When the Cholesky factor is missing or badly conditioned a ridge of
/// `1e-8 * trace / dim` is added to the diagonal. Returns the solution and
/// whether the ridge was used.
pub(crate) fn solve_normal(mut lhs: DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    if let Some(chol) = lhs.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
        if hi > 0.0 && (lo / hi).powi(2) > 1e-13 {
            return Some((chol.solve(rhs), false));
        }
    }
    let dim = lhs.nrows() as f64;
    let ridge = (1e-8 * lhs.trace() / dim).max(1e-12);
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += ridge;
    }
    lhs.cholesky().map(|c| (c.solve(rhs), true))
}

/// Least-squares fit of a (possibly quadratic) linear model.
#[derive(Clone, Debug)]
pub struct LinearModel {
    degree: Degree,
    coefficients: DVector<f64>,
    ridged: bool,
}

impl LinearModel {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Whether the ridge guard had to be applied.
    pub fn ridged(&self) -> bool {
        self.ridged
    }
}

impl Model for LinearModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (expand(x, self.degree) * &self.coefficients).data.into()
    }
}

/// Ordinary least squares with the near-singularity ridge guard.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64], degree: Degree) -> Result<LinearModel> {
    fit_ols_guarded(x, y, degree, true)
}

pub fn fit_ols_guarded(
    x: &DMatrix<f64>,
    y: &[f64],
    degree: Degree,
    ridge_guard: bool,
) -> Result<LinearModel> {
    if x.nrows() != y.len() || y.is_empty() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} targets",
            x.nrows(),
            y.len()
        )));
    }
    let design = expand(x, degree);
    let (rows, cols) = design.shape();
    if rows < cols && !ridge_guard {
        return Err(Error::Rank { rows, cols });
    }
    let target = DVector::from_column_slice(y);
    let xtx = design.tr_mul(&design);
    let xty = design.tr_mul(&target);
    let (coefficients, ridged) = solve_normal(xtx, &xty).ok_or(Error::Rank { rows, cols })?;
    if ridged && !ridge_guard {
        return Err(Error::Rank { rows, cols });
    }
    Ok(LinearModel {
        degree,
        coefficients,
        ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn recovers_exact_line() {
        let m = fit_ols(&col(&[0.0, 1.0, 2.0]), &[1.0, 3.0, 5.0], Degree::Main).unwrap();
        assert!((m.predict(&col(&[3.0]))[0] - 7.0).abs() < 1e-10);
    }

    #[test]
    fn recovers_exact_parabola() {
        let m = fit_ols(&col(&[-1.0, 0.0, 1.0]), &[1.0, 0.0, 1.0], Degree::Quadratic).unwrap();
        assert!((m.predict(&col(&[2.0]))[0] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_target() {
        let x = col(&[0.3, -1.0, 2.0, 5.0]);
        let m = fit_ols(&x, &[4.0; 4], Degree::Main).unwrap();
        for v in m.predict(&col(&[-10.0, 0.0, 10.0])) {
            assert!((v - 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_expansion_layout() {
        let x = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let d = expand(&x, Degree::Quadratic);
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn too_few_rows_without_guard() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            fit_ols_guarded(&x, &[1.0, 2.0], Degree::Quadratic, false),
            Err(Error::Rank { .. })
        ));
        let m = fit_ols(&x, &[1.0, 2.0], Degree::Quadratic).unwrap();
        assert!(m.ridged());
        assert!(m.predict(&x).iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn affine_equivariant_in_targets(
            xs in prop::collection::vec(-3.0f64..3.0, 8..30),
            noise in prop::collection::vec(-1.0f64..1.0, 30),
            scale in -5.0f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            let n = xs.len();
            let x = col(&xs);
            let y: Vec<f64> = xs.iter().zip(&noise).map(|(a, e)| 0.5 * a + e).collect();
            let y2: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
            let m1 = fit_ols(&x, &y, Degree::Main).unwrap();
            let m2 = fit_ols(&x, &y2, Degree::Main).unwrap();
            prop_assume!(!m1.ridged() && !m2.ridged());
            let (p1, p2) = (m1.predict(&x), m2.predict(&x));
            for i in 0..n {
                prop_assert!((scale * p1[i] + shift - p2[i]).abs() < 1e-8 * (1.0 + p2[i].abs()));
            }
        }
    }
}
