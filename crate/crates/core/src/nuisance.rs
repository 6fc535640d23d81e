//! Propensity score, outcome regressions and doubly robust arm means.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dataset::{Arm, Dataset, FoldAssignment, EPS_Y};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::rng::derive_seed;

pub const DEFAULT_CLIP_G: f64 = 0.01;

/// A propensity function known by design, evaluated on a covariate row.
#[derive(Clone)]
pub struct KnownPropensity {
    label: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl KnownPropensity {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        KnownPropensity {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

impl fmt::Debug for KnownPropensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KnownPropensity({})", self.label)
    }
}

#[derive(Clone, Debug)]
pub enum PropensitySpec {
    KnownConstant(f64),
    KnownFunction(KnownPropensity),
    Learner(LearnerSpec),
}

impl PropensitySpec {
    /// Parses `known:<p>` or any learner spec.
    pub fn parse(text: &str) -> Result<PropensitySpec> {
        let text = text.trim();
        if let Some(p) = text.strip_prefix("known:") {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad known propensity `{text}`")))?;
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("known propensity must be in (0, 1), got {p}")));
            }
            return Ok(PropensitySpec::KnownConstant(p));
        }
        LearnerSpec::parse(text).map(PropensitySpec::Learner)
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, PropensitySpec::Learner(_))
    }
}

impl fmt::Display for PropensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensitySpec::KnownConstant(p) => write!(f, "known:{p}"),
            PropensitySpec::KnownFunction(k) => write!(f, "known:{}", k.label),
            PropensitySpec::Learner(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NuisanceConfig {
    pub propensity: PropensitySpec,
    pub outcome_mean: LearnerSpec,
    pub outcome_sq: LearnerSpec,
    /// Propensities are clipped into `[clip_g, 1 - clip_g]`.
    pub clip_g: f64,
    /// Estimate `E[Y^2 | W, A]` as `q1^2` plus the arm's residual variance
    /// instead of regressing `Y^2` directly.
    pub derived_q2: bool,
}

impl NuisanceConfig {
    pub fn new(propensity: PropensitySpec, outcome_mean: LearnerSpec, outcome_sq: LearnerSpec) -> Self {
        NuisanceConfig {
            propensity,
            outcome_mean,
            outcome_sq,
            clip_g: DEFAULT_CLIP_G,
            derived_q2: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_g > 0.0 && self.clip_g < 0.5) {
            return Err(Error::Config(format!("clip_g must be in (0, 0.5), got {}", self.clip_g)));
        }
        if let PropensitySpec::KnownConstant(p) = self.propensity {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("known propensity must be in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Canonical text, used in report fingerprints.
    pub fn describe(&self) -> String {
        format!(
            "g={};q1={};q2={}{};clip_g={}",
            self.propensity,
            self.outcome_mean,
            self.outcome_sq,
            if self.derived_q2 { "(derived)" } else { "" },
            self.clip_g
        )
    }
}

/// Nuisance estimates evaluated on a set of rows, together with those rows' data.
#[derive(Clone, Debug, PartialEq)]
pub struct NuisanceFit {
    idx: Vec<usize>,
    a: Vec<u8>,
    y: Vec<f64>,
    g: Vec<f64>,
    q1: [Vec<f64>; 2],
    q2: [Vec<f64>; 2],
    mu: [f64; 2],
}

fn slot(arm: Arm) -> usize {
    arm.indicator() as usize
}

impl NuisanceFit {
    /// Assembles a fit from externally supplied nuisances (e.g. true values in a simulation).
    ///
    /// `q1`, `q2` and `mu` are indexed by arm (control first).
    pub fn from_parts(
        idx: Vec<usize>,
        a: Vec<u8>,
        y: Vec<f64>,
        g: Vec<f64>,
        q1: [Vec<f64>; 2],
        q2: [Vec<f64>; 2],
        mu: [f64; 2],
    ) -> Result<Self> {
        let m = idx.len();
        let lens = [a.len(), y.len(), g.len(), q1[0].len(), q1[1].len(), q2[0].len(), q2[1].len()];
        if lens.iter().any(|&l| l != m) {
            return Err(Error::Contract(format!("nuisance component lengths {lens:?} for {m} rows")));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&y) && finite(&g) && q1.iter().all(|v| finite(v)) && q2.iter().all(|v| finite(v)))
            || !mu.iter().all(|m| m.is_finite())
        {
            return Err(Error::Contract("non-finite nuisance values".into()));
        }
        if g.iter().any(|&v| v <= 0.0 || v >= 1.0) {
            return Err(Error::Contract("propensities must lie in (0, 1)".into()));
        }
        Ok(NuisanceFit {
            idx,
            a,
            y,
            g,
            q1,
            q2,
            mu,
        })
    }

    /// Row indices (into the full dataset) this fit is evaluated on.
    pub fn idx(&self) -> &[usize] {
        &self.idx
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn q1(&self, arm: Arm) -> &[f64] {
        &self.q1[slot(arm)]
    }

    pub fn q2(&self, arm: Arm) -> &[f64] {
        &self.q2[slot(arm)]
    }

    pub fn mu(&self, arm: Arm) -> f64 {
        self.mu[slot(arm)]
    }

    pub fn clever_covariate(&self) -> CleverCovariate {
        clever_covariate(&self.a, &self.g)
    }

    /// True when `E_n[q2] < E_n[q1^2]` for the arm, which no conditional law can produce.
    pub fn second_moment_inconsistent(&self, arm: Arm) -> bool {
        let m = self.len() as f64;
        let q1 = self.q1(arm);
        let mean_q2 = self.q2(arm).iter().sum::<f64>() / m;
        let mean_q1_sq = q1.iter().map(|v| v * v).sum::<f64>() / m;
        mean_q2 < mean_q1_sq
    }
}

/// Inverse-probability weights `h(a) = I(A = a) / P(A = a | W)` for both arms.
#[derive(Clone, Debug, PartialEq)]
pub struct CleverCovariate {
    h: [Vec<f64>; 2],
    inverse: [Vec<f64>; 2],
}

impl CleverCovariate {
    pub fn h(&self, arm: Arm) -> &[f64] {
        &self.h[slot(arm)]
    }

    /// `1 / P(A = a | W)` on every row, i.e. `h(a)` evaluated at the counterfactual `A = a`.
    pub fn inverse_propensity(&self, arm: Arm) -> &[f64] {
        &self.inverse[slot(arm)]
    }
}

pub fn clever_covariate(a: &[u8], g: &[f64]) -> CleverCovariate {
    let build = |arm: Arm| -> (Vec<f64>, Vec<f64>) {
        let inverse: Vec<f64> = g.iter().map(|&gi| 1.0 / arm.prob(gi)).collect();
        let h = a
            .iter()
            .zip(&inverse)
            .map(|(&ai, &inv)| if arm.matches(ai) { inv } else { 0.0 })
            .collect();
        (h, inverse)
    };
    let (h0, i0) = build(Arm::Control);
    let (h1, i1) = build(Arm::Treated);
    CleverCovariate {
        h: [h0, h1],
        inverse: [i0, i1],
    }
}

/// Augmented IPW estimate of `E[Y^(a)]` over the given rows.
pub fn aipw_mean(a: &[u8], y: &[f64], g: &[f64], q1: &[f64], arm: Arm) -> f64 {
    let m = y.len() as f64;
    a.iter()
        .zip(y)
        .zip(g.iter().zip(q1))
        .map(|((&ai, &yi), (&gi, &qi))| {
            let correction = if arm.matches(ai) { (yi - qi) / arm.prob(gi) } else { 0.0 };
            correction + qi
        })
        .sum::<f64>()
        / m
}

fn gather(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Fits the nuisances on `train_idx` and evaluates them on `eval_idx`.
///
/// Outcome regressions are fitted separately within each treatment arm of the
/// training rows, then predicted for both counterfactual arms on the
/// evaluation rows.
pub fn fit_nuisances(
    d: &Dataset,
    cfg: &NuisanceConfig,
    train_idx: &[usize],
    eval_idx: &[usize],
    seed: u64,
) -> Result<NuisanceFit> {
    cfg.validate()?;
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(Error::Contract("training and evaluation rows must be non-empty".into()));
    }
    let w_eval: DMatrix<f64> = d.w().select_rows(eval_idx);
    let a_eval: Vec<u8> = eval_idx.iter().map(|&i| d.a()[i]).collect();
    let y_eval = gather(d.y(), eval_idx);

    let g_raw = match &cfg.propensity {
        PropensitySpec::KnownConstant(p) => vec![*p; eval_idx.len()],
        PropensitySpec::KnownFunction(f) => eval_idx
            .iter()
            .map(|&i| {
                let row: Vec<f64> = d.w().row(i).iter().copied().collect();
                f.eval(&row)
            })
            .collect(),
        PropensitySpec::Learner(spec) => {
            let targets: Vec<f64> = train_idx.iter().map(|&i| f64::from(d.a()[i])).collect();
            spec.fit(&d.w().select_rows(train_idx), &targets, derive_seed(seed, &[0]))?
                .predict(&w_eval)
        }
    };
    if g_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Learner {
            learner: cfg.propensity.to_string(),
            message: "non-finite propensity predictions".into(),
        });
    }
    let g: Vec<f64> = g_raw
        .iter()
        .map(|&v| v.clamp(cfg.clip_g, 1.0 - cfg.clip_g))
        .collect();

    let mut q1: [Vec<f64>; 2] = Default::default();
    let mut q2: [Vec<f64>; 2] = Default::default();
    for arm in Arm::BOTH {
        let rows: Vec<usize> = train_idx
            .iter()
            .copied()
            .filter(|&i| arm.matches(d.a()[i]))
            .collect();
        if rows.is_empty() {
            return Err(Error::DegenerateDesign(format!(
                "training rows contain no observations from arm {}",
                arm.indicator()
            )));
        }
        let w_train = d.w().select_rows(&rows);
        let y_train = gather(d.y(), &rows);
        let tag = u64::from(arm.indicator());
        let mean_model = cfg
            .outcome_mean
            .fit(&w_train, &y_train, derive_seed(seed, &[1, tag]))?;
        let mean_eval = mean_model.predict(&w_eval);
        let sq_eval = if cfg.derived_q2 {
            let fitted = mean_model.predict(&w_train);
            let resid_var = y_train
                .iter()
                .zip(&fitted)
                .map(|(y, f)| (y - f).powi(2))
                .sum::<f64>()
                / rows.len() as f64;
            mean_eval.iter().map(|q| q * q + resid_var).collect()
        } else {
            let y_sq: Vec<f64> = y_train.iter().map(|v| v * v).collect();
            cfg.outcome_sq
                .fit(&w_train, &y_sq, derive_seed(seed, &[2, tag]))?
                .predict(&w_eval)
        };
        if mean_eval.iter().chain(&sq_eval).any(|v| !v.is_finite()) {
            return Err(Error::Learner {
                learner: format!("{} / {}", cfg.outcome_mean, cfg.outcome_sq),
                message: "non-finite outcome predictions".into(),
            });
        }
        let clip = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter().map(|x| x.clamp(EPS_Y, 1.0 - EPS_Y)).collect()
        };
        q1[slot(arm)] = clip(mean_eval);
        q2[slot(arm)] = clip(sq_eval);
    }

    let mu = [Arm::Control, Arm::Treated]
        .map(|arm| aipw_mean(&a_eval, &y_eval, &g, &q1[slot(arm)], arm));
    let fit = NuisanceFit::from_parts(eval_idx.to_vec(), a_eval, y_eval, g, q1, q2, mu)?;
    for arm in Arm::BOTH {
        if fit.second_moment_inconsistent(arm) {
            log::debug!("arm {}: mean of q2 below mean of q1^2", arm.indicator());
        }
    }
    Ok(fit)
}

/// How nuisances are trained relative to the rows they are evaluated on.
#[derive(Clone, Debug)]
pub enum SplitPlan {
    /// Train and evaluate on the full sample.
    Full,
    /// K-fold cross-fitting: each fold is evaluated with nuisances trained on the rest.
    CrossFit(FoldAssignment),
}

/// Fits one [`NuisanceFit`] per evaluation block of the plan.
///
/// The full-sample plan is the single-block case, so both paths share this code.
pub fn fit_planned(d: &Dataset, cfg: &NuisanceConfig, plan: &SplitPlan, seed: u64) -> Result<Vec<NuisanceFit>> {
    match plan {
        SplitPlan::Full => {
            let all: Vec<usize> = (0..d.n()).collect();
            Ok(vec![fit_nuisances(d, cfg, &all, &all, derive_seed(seed, &[0]))?])
        }
        SplitPlan::CrossFit(folds) => (0..folds.k())
            .map(|k| {
                fit_nuisances(
                    d,
                    cfg,
                    &folds.complement(k),
                    &folds.fold(k),
                    derive_seed(seed, &[k as u64]),
                )
                .map_err(|e| e.in_fold(k))
            })
            .collect(),
    }
}
