//! Cross-validated stacking of base learners with simplex-constrained weights.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::{LearnerSpec, Model};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Grid resolution used for exhaustive weight search with few learners.
const GRID_STEP: usize = 20;
const MAX_GRID_LEARNERS: usize = 4;

#[derive(Debug)]
pub struct StackedModel {
    names: Vec<String>,
    weights: Vec<f64>,
    cv_mse: Vec<f64>,
    models: Vec<Option<Box<dyn Model>>>,
}

impl StackedModel {
    /// Simplex weights, one per base learner (zero for dropped learners).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Cross-validated MSE of each base learner (`inf` when it failed).
    pub fn cv_mse(&self) -> &[f64] {
        &self.cv_mse
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Model for StackedModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        for (w, model) in self.weights.iter().zip(&self.models) {
            if let Some(model) = model {
                for (o, p) in out.iter_mut().zip(model.predict(x)) {
                    *o += w * p;
                }
            }
        }
        out
    }
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

fn combine(weights: &[f64], columns: &[Vec<f64>], i: usize) -> f64 {
    weights.iter().zip(columns).map(|(w, c)| w * c[i]).sum()
}

/// Cross-validated MSE of the convex combination `weights` of out-of-fold predictions.
pub fn stacked_cv_mse(weights: &[f64], oof: &[Vec<f64>], y: &[f64]) -> f64 {
    (0..y.len())
        .map(|i| (combine(weights, oof, i) - y[i]).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

/// All compositions of `GRID_STEP` into `parts` nonnegative integers.
fn simplex_grid(parts: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|&c| c as f64 / GRID_STEP as f64).collect());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(left - c, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(GRID_STEP, parts, &mut Vec::new(), &mut out);
    out
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn projected_gradient(oof: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let l = oof.len();
    let n = y.len() as f64;
    // Lipschitz bound from the trace of the Gram matrix.
    let trace: f64 = oof.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum();
    let step = n / (2.0 * trace.max(1e-12));
    let mut w = vec![1.0 / l as f64; l];
    for _ in 0..2000 {
        let resid: Vec<f64> = (0..y.len()).map(|i| combine(&w, oof, i) - y[i]).collect();
        let grad: Vec<f64> = oof
            .iter()
            .map(|c| 2.0 * c.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n)
            .collect();
        let next = project_simplex(
            &w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>(),
        );
        let delta: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        w = next;
        if delta < 1e-12 {
            break;
        }
    }
    w
}

/// Fits a stacked ensemble whose weights minimise cross-validated squared error.
///
/// Learners that fail in any fold are dropped with a warning.
pub fn fit_stacking(
    base: &[LearnerSpec],
    x: &DMatrix<f64>,
    y: &[f64],
    cv_folds: usize,
    seed: u64,
) -> Result<StackedModel> {
    let n = y.len();
    if cv_folds < 2 || n < cv_folds {
        return Err(Error::Config(format!(
            "stacking needs 2 <= cv_folds <= n (cv_folds = {cv_folds}, n = {n})"
        )));
    }
    if base.is_empty() {
        return Err(Error::Config("stacking needs at least one base learner".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % cv_folds;
    }
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..cv_folds)
        .map(|v| {
            let (hold, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == v);
            (train, hold)
        })
        .collect();

    let names: Vec<String> = base.iter().map(|b| b.to_string()).collect();
    let mut oof: Vec<Option<Vec<f64>>> = Vec::with_capacity(base.len());
    for (j, learner) in base.iter().enumerate() {
        let mut pred = vec![0.0; n];
        let mut ok = true;
        for (v, (train, hold)) in folds.iter().enumerate() {
            let xt = x.select_rows(train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fitted = learner
                .fit(&xt, &yt, derive_seed(seed, &[j as u64, v as u64]))
                .map(|m| m.predict(&x.select_rows(hold)));
            match fitted {
                Ok(p) if p.iter().all(|v| v.is_finite()) => {
                    for (&i, pv) in hold.iter().zip(p) {
                        pred[i] = pv;
                    }
                }
                Ok(_) => {
                    log::warn!("stacking: dropping `{}` (non-finite predictions)", names[j]);
                    ok = false;
                    break;
                }
                Err(e) => {
                    log::warn!("stacking: dropping `{}`: {e}", names[j]);
                    ok = false;
                    break;
                }
            }
        }
        oof.push(ok.then_some(pred));
    }

    let active: Vec<usize> = (0..base.len()).filter(|&j| oof[j].is_some()).collect();
    if active.is_empty() {
        return Err(Error::Learner {
            learner: format!("stack({})", names.join(",")),
            message: "every base learner failed".into(),
        });
    }
    let cv_mse: Vec<f64> = oof
        .iter()
        .map(|p| p.as_ref().map_or(f64::INFINITY, |p| mse(p, y)))
        .collect();
    let columns: Vec<Vec<f64>> = active.iter().map(|&j| oof[j].clone().unwrap()).collect();

    let active_weights = if active.len() == 1 {
        vec![1.0]
    } else if active.len() <= MAX_GRID_LEARNERS {
        let mut best = (f64::INFINITY, Vec::new());
        for w in simplex_grid(active.len()) {
            let loss = stacked_cv_mse(&w, &columns, y);
            if loss < best.0 {
                best = (loss, w);
            }
        }
        best.1
    } else {
        projected_gradient(&columns, y)
    };

    let mut weights = vec![0.0; base.len()];
    let mut models: Vec<Option<Box<dyn Model>>> = (0..base.len()).map(|_| None).collect();
    for (&j, &w) in active.iter().zip(&active_weights) {
        weights[j] = w;
        if w > 0.0 {
            models[j] = Some(base[j].fit(x, y, derive_seed(seed, &[j as u64, u64::MAX]))?);
        }
    }
    Ok(StackedModel {
        names,
        weights,
        cv_mse,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::linear::{fit_ols, Degree};
    use crate::learners::ForestParams;
    use rand::{Rng, SeedableRng};

    fn linear_data(n: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = xs.iter().map(|v| 1.0 + 2.0 * v).collect();
        (DMatrix::from_column_slice(n, 1, &xs), y)
    }

    #[test]
    fn single_learner_gets_full_weight() {
        let (x, y) = linear_data(40);
        let m = fit_stacking(&[LearnerSpec::Ols(Degree::Main)], &x, &y, 5, 1).unwrap();
        assert_eq!(m.weights(), &[1.0]);
        let direct = fit_ols(&x, &y, Degree::Main).unwrap().predict(&x);
        for (a, b) in m.predict(&x).iter().zip(direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_beat_corners() {
        let (x, y) = linear_data(60);
        let base = [LearnerSpec::Mean, LearnerSpec::Ols(Degree::Main)];
        let m = fit_stacking(&base, &x, &y, 5, 2).unwrap();
        let w = m.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w, &[0.0, 1.0]);
        assert!(m.cv_mse()[1] < 1e-20);
    }

    #[test]
    fn all_failing_is_an_error() {
        let (x, y) = linear_data(12);
        let bad = LearnerSpec::Forest(ForestParams {
            min_leaf: 50,
            ..Default::default()
        });
        assert!(matches!(
            fit_stacking(&[bad.clone()], &x, &y, 3, 0),
            Err(Error::Learner { .. })
        ));
        let m = fit_stacking(&[bad, LearnerSpec::Mean], &x, &y, 3, 0).unwrap();
        assert_eq!(m.weights(), &[0.0, 1.0]);
        assert!(m.cv_mse()[0].is_infinite());
    }

    #[test]
    fn grid_and_projection_basics() {
        assert_eq!(simplex_grid(2).len(), 21);
        assert_eq!(simplex_grid(3).len(), 231);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(project_simplex(&[2.0, -1.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn projected_gradient_matches_grid_on_easy_problem() {
        let (x, y) = linear_data(50);
        let ols = fit_ols(&x, &y, Degree::Main).unwrap().predict(&x);
        let cols = vec![vec![0.0; 50], ols.clone(), ols.iter().map(|v| v + 1.0).collect(), vec![1.0; 50], ols];
        let w = projected_gradient(&cols, &y);
        assert!(stacked_cv_mse(&w, &cols, &y) < 1e-6);
    }
}
