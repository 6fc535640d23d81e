//! Observed data `(W, A, Y)`, outcome scaling and cross-fitting folds.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior clip applied to min-max scaled outcomes so that their logits stay finite.
pub const EPS_Y: f64 = 1e-4;

/// Treatment arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn indicator(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn matches(self, a: u8) -> bool {
        a == self.indicator()
    }

    /// Probability of receiving this arm given the propensity `g = P(A = 1 | W)`.
    pub fn prob(self, g: f64) -> f64 {
        match self {
            Arm::Control => 1.0 - g,
            Arm::Treated => g,
        }
    }
}

/// A validated sample of `n` observations with `p` real covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    w: DMatrix<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(w: DMatrix<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let names = (1..=w.ncols()).map(|j| format!("w{j}")).collect();
        Self::with_names(w, a, y, names)
    }

    pub fn with_names(
        w: DMatrix<f64>,
        a: Vec<u8>,
        y: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if a.len() != n || w.nrows() != n {
            return Err(Error::Contract(format!(
                "length mismatch: w has {} rows, a has {}, y has {}",
                w.nrows(),
                a.len(),
                n
            )));
        }
        if covariate_names.len() != w.ncols() {
            return Err(Error::Contract(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                w.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::DegenerateDesign(format!("need at least 2 rows, got {n}")));
        }
        for i in 0..n {
            if a[i] > 1 {
                return Err(Error::Validation {
                    row: i + 1,
                    column: "treatment".into(),
                    message: format!("treatment must be 0 or 1, got {}", a[i]),
                });
            }
            if !y[i].is_finite() {
                return Err(Error::Validation {
                    row: i + 1,
                    column: "outcome".into(),
                    message: format!("non-finite outcome {}", y[i]),
                });
            }
            for j in 0..w.ncols() {
                if !w[(i, j)].is_finite() {
                    return Err(Error::Validation {
                        row: i + 1,
                        column: covariate_names[j].clone(),
                        message: format!("non-finite covariate {}", w[(i, j)]),
                    });
                }
            }
        }
        let treated = a.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::DegenerateDesign(format!(
                "both arms must be non-empty ({treated} treated of {n})"
            )));
        }
        Ok(Dataset {
            w,
            a,
            y,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Row indices belonging to `arm`, in sample order.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        (0..self.n()).filter(|&i| arm.matches(self.a[i])).collect()
    }

    /// Same design with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::with_names(self.w.clone(), self.a.clone(), y, self.covariate_names.clone())
    }
}

/// Reads a header-led CSV file. Rows are reported 1-based, counting data rows only.
pub fn load_csv(
    path: impl AsRef<Path>,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let y_col = find(outcome)?;
    let a_col = find(treatment)?;
    let w_cols = covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let parse = |record: &csv::StringRecord, col: usize, name: &str, row: usize| -> Result<f64> {
        let cell = record.get(col).unwrap_or("");
        let value: f64 = cell.parse().map_err(|_| Error::Validation {
            row,
            column: name.to_string(),
            message: format!("non-numeric cell `{cell}`"),
        })?;
        if !value.is_finite() {
            return Err(Error::Validation {
                row,
                column: name.to_string(),
                message: format!("non-finite value `{cell}`"),
            });
        }
        Ok(value)
    };

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut w_data = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        y.push(parse(&record, y_col, outcome, row)?);
        let t = parse(&record, a_col, treatment, row)?;
        a.push(match t {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            v => {
                return Err(Error::Validation {
                    row,
                    column: treatment.to_string(),
                    message: format!("treatment must be 0 or 1, got {v}"),
                })
            }
        });
        for (&col, name) in w_cols.iter().zip(covariates) {
            w_data.push(parse(&record, col, name, row)?);
        }
    }
    let w = DMatrix::from_row_slice(y.len(), covariates.len(), &w_data);
    Dataset::with_names(w, a, y, covariates.to_vec())
}

/// Pooled min-max range used to map outcomes onto the unit interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub y_min: f64,
    pub y_max: f64,
}

impl ScalingParams {
    pub fn range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn scale(&self, y: f64) -> f64 {
        ((y - self.y_min) / self.range()).clamp(EPS_Y, 1.0 - EPS_Y)
    }

    pub fn unscale(&self, y: f64) -> f64 {
        self.y_min + y * self.range()
    }
}

/// Min-max scales the outcome, then clips it into `[EPS_Y, 1 - EPS_Y]`.
pub fn scale_outcome(d: &Dataset) -> Result<(Dataset, ScalingParams)> {
    let (y_min, y_max) = d
        .y()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if y_max <= y_min {
        return Err(Error::DegenerateOutcome(y_min));
    }
    let params = ScalingParams { y_min, y_max };
    let y = d.y().iter().map(|&v| params.scale(v)).collect();
    Ok((d.with_outcome(y)?, params))
}

/// Maps a variance computed on the scaled outcome back to squared original units.
pub fn unscale_variance(v: f64, s: &ScalingParams) -> Result<f64> {
    if v < 0.0 || !v.is_finite() {
        return Err(Error::Contract(format!(
            "variance to unscale must be finite and nonnegative, got {v}"
        )));
    }
    Ok(v * s.range() * s.range())
}

/// Arm-stratified assignment of observations to `k` folds (ids `0..k`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == f).collect()
    }

    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != f).collect()
    }
}

/// Shuffles each arm with `seed` and deals its members round-robin across folds.
///
/// The control arm starts dealing where the treated arm stopped, so overall fold
/// sizes also differ by at most one.
pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; d.n()];
    let mut offset = 0;
    for arm in [Arm::Treated, Arm::Control] {
        let mut idx = d.arm_indices(arm);
        if idx.len() < k {
            return Err(Error::InfeasibleFolds {
                k,
                arm: arm.indicator(),
                arm_size: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = (offset + pos) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(FoldAssignment { k, fold_of })
}
