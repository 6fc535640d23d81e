//! One-parameter logistic regression with a fixed offset, used for targeting.

use serde::{Deserialize, Serialize};

use super::expit;
use crate::error::{Error, Result};

const MAX_NEWTON: usize = 50;
const MAX_HALVINGS: usize = 40;
const BRACKET: f64 = 20.0;
const MAX_BISECTIONS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetLogisticFit {
    pub eta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sum_i h_i (t_i - expit(offset_i + eta h_i))` at the returned `eta`.
    pub score: f64,
    /// Absolute score after each iteration.
    pub trace: Vec<f64>,
}

/// Row `i` contributes `w_i x_i (t_i - expit(offset_i + eta x_i))`; `w = None` means unit weights.
#[derive(Clone, Copy)]
struct Design<'a> {
    x: &'a [f64],
    w: Option<&'a [f64]>,
    offset: &'a [f64],
    t: &'a [f64],
}

fn score(d: Design<'_>, eta: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut info = 0.0;
    for i in 0..d.x.len() {
        let (x, w) = (d.x[i], d.w.map_or(1.0, |w| w[i]));
        if x == 0.0 || w == 0.0 {
            continue;
        }
        let p = expit(d.offset[i] + eta * x);
        s += w * x * (d.t[i] - p);
        info += w * x * x * p * (1.0 - p);
    }
    (s, info)
}

fn check_nonnegative(v: &[f64], what: &str) -> Result<()> {
    match v.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(bad) => Err(Error::Contract(format!("{what} must be finite and nonnegative, got {bad}"))),
        None => Ok(()),
    }
}

/// Maximum-likelihood slope `eta` of `t ~ expit(offset + eta * h)`.
///
/// Newton steps with step halving; if Newton stalls the score (monotone in
/// `eta`) is bisected over `[-20, 20]`. Converged means `|score| <= 1e-8 * n`.
pub fn fit_offset_logistic(h: &[f64], offset: &[f64], t: &[f64]) -> Result<OffsetLogisticFit> {
    let n = h.len();
    if offset.len() != n || t.len() != n {
        return Err(Error::Contract(format!(
            "offset logistic inputs differ in length ({n}, {}, {})",
            offset.len(),
            t.len()
        )));
    }
    if let Some(o) = offset.iter().find(|o| !o.is_finite()) {
        return Err(Error::Contract(format!("non-finite offset {o}")));
    }
    check_nonnegative(h, "covariate")?;
    solve(Design {
        x: h,
        w: None,
        offset,
        t,
    })
}

/// Intercept-only fluctuation `t ~ expit(offset + eta)` fitted with case weights `w`.
///
/// Solves `sum_i w_i (t_i - expit(offset_i + eta)) = 0` with the same solver and
/// convergence rule as [`fit_offset_logistic`].
pub fn fit_weighted_offset_logistic(w: &[f64], offset: &[f64], t: &[f64]) -> Result<OffsetLogisticFit> {
    let n = w.len();
    if offset.len() != n || t.len() != n {
        return Err(Error::Contract(format!(
            "offset logistic inputs differ in length ({n}, {}, {})",
            offset.len(),
            t.len()
        )));
    }
    if let Some(o) = offset.iter().find(|o| !o.is_finite()) {
        return Err(Error::Contract(format!("non-finite offset {o}")));
    }
    check_nonnegative(w, "weights")?;
    let ones = vec![1.0; n];
    solve(Design {
        x: &ones,
        w: Some(w),
        offset,
        t,
    })
}

fn solve(d: Design<'_>) -> Result<OffsetLogisticFit> {
    let n = d.x.len();
    let tol = 1e-8 * n.max(1) as f64;
    let mut eta = 0.0;
    let (mut s, mut info) = score(d, eta);
    let mut trace = vec![s.abs()];
    let mut iterations = 0;

    while s.abs() > tol && iterations < MAX_NEWTON {
        iterations += 1;
        if info <= 0.0 || !info.is_finite() {
            break;
        }
        let step = s / info;
        let mut accepted = false;
        let mut factor = 1.0;
        for _ in 0..MAX_HALVINGS {
            let candidate = eta + factor * step;
            let (cs, ci) = score(d, candidate);
            if cs.abs() < s.abs() {
                eta = candidate;
                s = cs;
                info = ci;
                accepted = true;
                break;
            }
            factor *= 0.5;
        }
        trace.push(s.abs());
        if !accepted {
            break;
        }
    }

    if s.abs() > tol {
        let (mut lo, mut hi) = (-BRACKET, BRACKET);
        let (s_lo, _) = score(d, lo);
        let (s_hi, _) = score(d, hi);
        if s_lo < 0.0 || s_hi > 0.0 {
            // Root outside the bracket: report the closest endpoint, unconverged.
            let (edge, se) = if s_lo < 0.0 { (lo, s_lo) } else { (hi, s_hi) };
            trace.push(se.abs());
            return Ok(OffsetLogisticFit {
                eta: edge,
                iterations,
                converged: false,
                score: se,
                trace,
            });
        }
        for _ in 0..MAX_BISECTIONS {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let (sm, _) = score(d, mid);
            eta = mid;
            s = sm;
            trace.push(s.abs());
            if s.abs() <= tol || hi - lo < 1e-15 {
                break;
            }
            // The score is decreasing in eta.
            if sm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    Ok(OffsetLogisticFit {
        eta,
        iterations,
        converged: s.abs() <= tol,
        score: s,
        trace,
    })
}
