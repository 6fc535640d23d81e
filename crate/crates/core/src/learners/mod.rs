//! Supervised learners for nuisance estimation and the targeting regression.
//!
//! Learners are described by a [`LearnerSpec`], which has a compact textual
//! form used by configuration files and the CLI:
//!
//! | spec | learner |
//! |------|---------|
//! | `mean` | sample mean |
//! | `ols`, `ols2` | least squares, main terms or full quadratic |
//! | `logit`, `logit2` | logistic regression by IRLS |
//! | `forest(trees=200,depth=8,min_leaf=5,mtry=1)` | random forest; all keys optional |
//! | `stack(ols,ols2,forest,cv=5)` | cross-validated stacking ensemble |
//!
//! Any spec may be suffixed with `[i,j,..]` to restrict it to the listed
//! (zero-based) covariate columns, e.g. `logit[1]`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

mod forest;
mod linear;
mod logistic;
mod offset;
mod stacking;

pub use forest::{fit_forest, Forest, ForestParams};
pub use linear::{expand, fit_ols, fit_ols_guarded, Degree, LinearModel};
pub use logistic::{fit_logistic_irls, LogisticModel};
pub use offset::{fit_offset_logistic, fit_weighted_offset_logistic, OffsetLogisticFit};
pub use stacking::{fit_stacking, stacked_cv_mse, StackedModel};

/// Clip applied to probability-type predictions.
pub const EPS_P: f64 = 1e-3;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A fitted regression function.
pub trait Model: Send + Sync + fmt::Debug {
    /// One prediction per row of `x`.
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanModel {
    pub mean: f64,
}

impl Model for MeanModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        vec![self.mean; x.nrows()]
    }
}

pub fn fit_mean(targets: &[f64]) -> Result<MeanModel> {
    if targets.is_empty() {
        return Err(Error::Contract("cannot fit a mean to no targets".into()));
    }
    Ok(MeanModel {
        mean: targets.iter().sum::<f64>() / targets.len() as f64,
    })
}

#[derive(Debug)]
struct SubsetModel {
    columns: Vec<usize>,
    inner: Box<dyn Model>,
}

impl Model for SubsetModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.inner.predict(&x.select_columns(&self.columns))
    }
}

/// Description of a learner, parsed from / printed to its textual form.
#[derive(Clone, Debug, PartialEq)]
pub enum LearnerSpec {
    Mean,
    Ols(Degree),
    Logistic(Degree),
    /// The seed inside the parameters is replaced by the seed passed to `fit`.
    Forest(ForestParams),
    Stack {
        base: Vec<LearnerSpec>,
        cv_folds: usize,
    },
    Subset {
        columns: Vec<usize>,
        inner: Box<LearnerSpec>,
    },
}

pub const DEFAULT_STACK_FOLDS: usize = 5;

impl LearnerSpec {
    pub fn parse(text: &str) -> Result<LearnerSpec> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
        };
        let spec = p.spec()?;
        p.ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing input"));
        }
        Ok(spec)
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Box<dyn Model>> {
        let wrap = |e: Error| match e {
            e @ Error::Learner { .. } => e,
            other => Error::Learner {
                learner: self.to_string(),
                message: other.to_string(),
            },
        };
        let model: Box<dyn Model> = match self {
            LearnerSpec::Mean => Box::new(fit_mean(y).map_err(wrap)?),
            LearnerSpec::Ols(d) => Box::new(fit_ols(x, y, *d).map_err(wrap)?),
            LearnerSpec::Logistic(d) => Box::new(fit_logistic_irls(x, y, *d).map_err(wrap)?),
            LearnerSpec::Forest(params) => {
                let params = ForestParams {
                    seed,
                    ..params.clone()
                };
                Box::new(fit_forest(x, y, &params).map_err(wrap)?)
            }
            LearnerSpec::Stack { base, cv_folds } => {
                Box::new(fit_stacking(base, x, y, *cv_folds, seed).map_err(wrap)?)
            }
            LearnerSpec::Subset { columns, inner } => {
                if let Some(&bad) = columns.iter().find(|&&c| c >= x.ncols()) {
                    return Err(wrap(Error::Config(format!(
                        "column {bad} out of range for {} covariates",
                        x.ncols()
                    ))));
                }
                let inner = inner.fit(&x.select_columns(columns), y, seed)?;
                Box::new(SubsetModel {
                    columns: columns.clone(),
                    inner,
                })
            }
        };
        Ok(model)
    }
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerSpec::Mean => write!(f, "mean"),
            LearnerSpec::Ols(Degree::Main) => write!(f, "ols"),
            LearnerSpec::Ols(Degree::Quadratic) => write!(f, "ols2"),
            LearnerSpec::Logistic(Degree::Main) => write!(f, "logit"),
            LearnerSpec::Logistic(Degree::Quadratic) => write!(f, "logit2"),
            LearnerSpec::Forest(p) => {
                write!(f, "forest(trees={},depth={},min_leaf={}", p.trees, p.max_depth, p.min_leaf)?;
                if let Some(m) = p.mtry {
                    write!(f, ",mtry={m}")?;
                }
                write!(f, ")")
            }
            LearnerSpec::Stack { base, cv_folds } => {
                write!(f, "stack(")?;
                for b in base {
                    write!(f, "{b},")?;
                }
                write!(f, "cv={cv_folds})")
            }
            LearnerSpec::Subset { columns, inner } => {
                let cols: Vec<String> = columns.iter().map(|c| c.to_string()).collect();
                write!(f, "{inner}[{}]", cols.join(","))
            }
        }
    }
}

impl std::str::FromStr for LearnerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LearnerSpec::parse(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::Config(format!(
            "learner spec `{}`: {what} at offset {}",
            String::from_utf8_lossy(self.src),
            self.pos
        ))
    }

    fn ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self) -> Result<String> {
        self.ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a name"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse().map_err(|_| self.error(&format!("expected an integer, got `{w}`")))
    }

    fn spec(&mut self) -> Result<LearnerSpec> {
        let name = self.word()?;
        let mut spec = match name.as_str() {
            "mean" => LearnerSpec::Mean,
            "ols" => LearnerSpec::Ols(Degree::Main),
            "ols2" => LearnerSpec::Ols(Degree::Quadratic),
            "logit" => LearnerSpec::Logistic(Degree::Main),
            "logit2" => LearnerSpec::Logistic(Degree::Quadratic),
            "forest" => {
                let mut params = ForestParams::default();
                if self.eat(b'(') && !self.eat(b')') {
                    loop {
                        let key = self.word()?;
                        if !self.eat(b'=') {
                            return Err(self.error("expected `=`"));
                        }
                        let value = self.number()?;
                        match key.as_str() {
                            "trees" => params.trees = value,
                            "depth" | "max_depth" => params.max_depth = value,
                            "min_leaf" => params.min_leaf = value,
                            "mtry" => params.mtry = Some(value),
                            other => return Err(self.error(&format!("unknown forest key `{other}`"))),
                        }
                        if self.eat(b')') {
                            break;
                        }
                        if !self.eat(b',') {
                            return Err(self.error("expected `,` or `)`"));
                        }
                    }
                }
                LearnerSpec::Forest(params)
            }
            "stack" => {
                if !self.eat(b'(') {
                    return Err(self.error("stack needs a parenthesised learner list"));
                }
                let mut base = Vec::new();
                let mut cv_folds = DEFAULT_STACK_FOLDS;
                loop {
                    let save = self.pos;
                    let key = self.word()?;
                    if key == "cv" && self.eat(b'=') {
                        cv_folds = self.number()?;
                    } else {
                        self.pos = save;
                        base.push(self.spec()?);
                    }
                    if self.eat(b')') {
                        break;
                    }
                    if !self.eat(b',') {
                        return Err(self.error("expected `,` or `)`"));
                    }
                }
                if base.is_empty() {
                    return Err(self.error("stack needs at least one learner"));
                }
                LearnerSpec::Stack { base, cv_folds }
            }
            other => return Err(self.error(&format!("unknown learner `{other}`"))),
        };
        if self.eat(b'[') {
            let mut columns = Vec::new();
            if !self.eat(b']') {
                loop {
                    columns.push(self.number()?);
                    if self.eat(b']') {
                        break;
                    }
                    if !self.eat(b',') {
                        return Err(self.error("expected `,` or `]`"));
                    }
                }
            }
            spec = LearnerSpec::Subset {
                columns,
                inner: Box::new(spec),
            };
        }
        Ok(spec)
    }
}
