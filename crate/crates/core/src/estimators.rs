//! One-step and targeted estimators of the arm variances, their cross-fitted
//! versions, and the standard-deviation difference and variance ratio built on them.
//!
//! All estimation runs on the outcome min-max scaled to the unit interval.
//! Variances are mapped back to squared original units at the end; the ratio
//! is unaffected by the scaling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, scale_outcome, unscale_variance, Arm, Dataset, ScalingParams, EPS_Y};
use crate::eif::{eif_lambda, eif_psi, eif_se, eif_sigma2_values, sigma2_terms, EifTarget, EifVector, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::inference::{wald, Wald};
use crate::learners::{expit, fit_offset_logistic, fit_weighted_offset_logistic, logit, OffsetLogisticFit};
use crate::nuisance::{fit_planned, NuisanceConfig, NuisanceFit, SplitPlan};
use crate::rng::derive_seed;

/// Largest tolerated `|E_n[EIF]|` after targeting.
pub const TMLE_SCORE_TOL: f64 = 1e-6;

pub const DEFAULT_FOLDS: usize = 5;

pub const REPORT_SCHEMA: &str = "diffvar-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "os")]
    OneStep,
    #[serde(rename = "tmle")]
    Tmle,
    #[serde(rename = "cfos")]
    CrossFitOneStep,
    #[serde(rename = "cftmle")]
    CrossFitTmle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::OneStep, Method::Tmle, Method::CrossFitOneStep, Method::CrossFitTmle];

    pub fn code(self) -> &'static str {
        match self {
            Method::OneStep => "os",
            Method::Tmle => "tmle",
            Method::CrossFitOneStep => "cfos",
            Method::CrossFitTmle => "cftmle",
        }
    }

    /// Display name used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::OneStep => "One-Step",
            Method::Tmle => "TMLE",
            Method::CrossFitOneStep => "CF One-Step",
            Method::CrossFitTmle => "CF TMLE",
        }
    }

    pub fn is_cross_fit(self) -> bool {
        matches!(self, Method::CrossFitOneStep | Method::CrossFitTmle)
    }

    pub fn is_targeted(self) -> bool {
        matches!(self, Method::Tmle | Method::CrossFitTmle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected os, tmle, cfos or cftmle)")))
    }
}

/// The contrast of potential-outcome variances being estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    /// `sd(Y^(1)) - sd(Y^(0))`, in outcome units.
    Psi,
    /// `var(Y^(1)) / var(Y^(0))`.
    Lambda,
}

impl Estimand {
    /// Value under homogeneous individual treatment effects.
    pub fn null_value(self) -> f64 {
        match self {
            Estimand::Psi => 0.0,
            Estimand::Lambda => 1.0,
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Psi => "psi",
            Estimand::Lambda => "lambda",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;

    /// Accepts `psi`/`abs` and `lambda`/`rel`.
    fn from_str(s: &str) -> Result<Estimand> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psi" | "abs" => Ok(Estimand::Psi),
            "lambda" | "rel" => Ok(Estimand::Lambda),
            _ => Err(Error::Config(format!("unknown estimand `{s}` (expected abs or rel)"))),
        }
    }
}

/// Parametric submodel used by the targeting step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fluctuation {
    /// `logit q* = logit q + eta * H`, the clever covariate as regressor.
    #[default]
    Covariate,
    /// `logit q* = logit q + eta`, fitted with the clever covariate as case weight.
    Weighted,
}

/// Estimate of one arm's potential-outcome variance.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceEstimate {
    pub arm: Arm,
    pub method: Method,
    pub value_scaled: f64,
    /// `max(value_scaled, 0)` in squared original units.
    pub value_original: f64,
    /// Influence values on the scaled outcome, one per dataset row in row order.
    pub eif: EifVector,
    pub se_original: f64,
    pub negative_flagged: bool,
}

impl VarianceEstimate {
    fn new(arm: Arm, method: Method, value: f64, eif: Vec<f64>, scaling: &ScalingParams) -> Result<Self> {
        let eif = EifVector {
            values: eif,
            target: EifTarget::Sigma2(arm),
        };
        let r2 = scaling.range() * scaling.range();
        let se_original = eif_se(&eif, eif.values.len()) * r2;
        Ok(VarianceEstimate {
            arm,
            method,
            value_scaled: value,
            value_original: unscale_variance(value.max(0.0), scaling)?,
            eif,
            se_original,
            negative_flagged: value < 0.0,
        })
    }

    pub fn se_scaled(&self) -> f64 {
        eif_se(&self.eif, self.eif.values.len())
    }
}

/// Estimate and influence values on one evaluation block.
struct BlockEstimate {
    value: f64,
    eif: Vec<f64>,
}

fn one_step_block(nf: &NuisanceFit, arm: Arm) -> BlockEstimate {
    let h = nf.clever_covariate();
    let (h, y, q1, q2, mu) = (h.h(arm), nf.y(), nf.q1(arm), nf.q2(arm), nf.mu(arm));
    let m = y.len() as f64;
    let total: f64 = (0..y.len())
        .map(|i| {
            let (weighted, plug_in) = sigma2_terms(h[i], y[i], q1[i], q2[i], mu);
            weighted + plug_in
        })
        .sum();
    let value = total / m + mu * mu;
    BlockEstimate {
        value,
        eif: eif_sigma2_values(h, y, q1, q2, mu, value),
    }
}

fn non_convergence(fit: &OffsetLogisticFit) -> Error {
    Error::TiltNonConvergence {
        iterations: fit.iterations,
        score: fit.score,
        trace: fit.trace.clone(),
    }
}

/// Fits the fluctuation of `q` towards `target` and returns the updated predictions on every row.
fn tilt(q: &[f64], target: &[f64], h: &[f64], inverse: &[f64], fluctuation: Fluctuation) -> Result<(Vec<f64>, OffsetLogisticFit)> {
    let offset: Vec<f64> = q.iter().map(|&v| logit(v.clamp(EPS_Y, 1.0 - EPS_Y))).collect();
    let fit = match fluctuation {
        Fluctuation::Covariate => fit_offset_logistic(h, &offset, target)?,
        Fluctuation::Weighted => fit_weighted_offset_logistic(h, &offset, target)?,
    };
    if !fit.converged {
        return Err(non_convergence(&fit));
    }
    let updated = match fluctuation {
        Fluctuation::Covariate => offset.iter().zip(inverse).map(|(o, c)| expit(o + fit.eta * c)).collect(),
        Fluctuation::Weighted => offset.iter().map(|o| expit(o + fit.eta)).collect(),
    };
    Ok((updated, fit))
}

fn tmle_block(nf: &NuisanceFit, arm: Arm, fluctuation: Fluctuation) -> Result<BlockEstimate> {
    let y = nf.y();
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("targeting requires outcomes scaled into [0, 1]".into()));
    }
    let y_sq: Vec<f64> = y.iter().map(|v| v * v).collect();
    let cc = nf.clever_covariate();
    let (h, inverse) = (cc.h(arm), cc.inverse_propensity(arm));
    let (q1, fit1) = tilt(nf.q1(arm), y, h, inverse, fluctuation)?;
    let (q2, fit2) = tilt(nf.q2(arm), &y_sq, h, inverse, fluctuation)?;

    let m = y.len() as f64;
    let mu = q1.iter().sum::<f64>() / m;
    let value = q2.iter().sum::<f64>() / m - mu * mu;
    if !(-0.25..=0.25).contains(&value) {
        log::warn!("arm {}: targeted variance {value} outside [-0.25, 0.25]", arm.indicator());
    }
    let eif = eif_sigma2_values(h, y, &q1, &q2, mu, value);
    let mean = eif.iter().sum::<f64>() / m;
    if !(mean.abs() <= TMLE_SCORE_TOL) {
        let mut trace = fit1.trace;
        trace.extend(fit2.trace);
        return Err(Error::TiltNonConvergence {
            iterations: fit1.iterations + fit2.iterations,
            score: mean,
            trace,
        });
    }
    Ok(BlockEstimate { value, eif })
}

/// Full-sample one-step estimate of the arm variance.
pub fn one_step_sigma2(nf: &NuisanceFit, arm: Arm, scaling: &ScalingParams) -> Result<VarianceEstimate> {
    let b = one_step_block(nf, arm);
    VarianceEstimate::new(arm, Method::OneStep, b.value, b.eif, scaling)
}

/// Full-sample targeted estimate of the arm variance.
pub fn tmle_sigma2(nf: &NuisanceFit, arm: Arm, scaling: &ScalingParams, fluctuation: Fluctuation) -> Result<VarianceEstimate> {
    let b = tmle_block(nf, arm, fluctuation)?;
    VarianceEstimate::new(arm, Method::Tmle, b.value, b.eif, scaling)
}

/// Combines per-block estimates with weights `n_k / n`.
///
/// `fits` partition the `n` rows; a single full-sample block is the
/// non-cross-fitted case. Influence values are written back in row order.
pub fn estimate_variance(
    fits: &[NuisanceFit],
    arm: Arm,
    method: Method,
    scaling: &ScalingParams,
    fluctuation: Fluctuation,
) -> Result<VarianceEstimate> {
    let n: usize = fits.iter().map(NuisanceFit::len).sum();
    if n == 0 {
        return Err(Error::Contract("no evaluation rows".into()));
    }
    let mut value = 0.0;
    let mut eif = vec![f64::NAN; n];
    for (k, nf) in fits.iter().enumerate() {
        let block = if method.is_targeted() {
            tmle_block(nf, arm, fluctuation).map_err(|e| if fits.len() > 1 { e.in_fold(k) } else { e })?
        } else {
            one_step_block(nf, arm)
        };
        value += block.value * nf.len() as f64 / n as f64;
        for (&i, v) in nf.idx().iter().zip(block.eif) {
            if i >= n || !eif[i].is_nan() {
                return Err(Error::Contract(format!("evaluation blocks do not partition rows (row {i})")));
            }
            eif[i] = v;
        }
    }
    VarianceEstimate::new(arm, method, value, eif, scaling)
}

/// A contrast with its Wald inference and the underlying arm estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastEstimate {
    pub estimand: Estimand,
    pub method: Method,
    /// Standard-deviation difference in outcome units, or the unitless ratio.
    pub estimate: f64,
    pub se: f64,
    pub alpha: f64,
    pub wald: Wald,
    /// Control arm first.
    pub arms: [VarianceEstimate; 2],
    /// Influence values of the contrast on the scaled outcome.
    pub eif: EifVector,
}

fn check_nonnegative(v: &VarianceEstimate) -> Result<()> {
    if !v.method.is_targeted() && v.value_scaled < 0.0 {
        return Err(Error::NegativeVariance {
            arm: v.arm.indicator(),
            value: v.value_scaled,
        });
    }
    Ok(())
}

/// Contrast of two arm estimates computed from the same rows.
pub fn contrast(
    control: VarianceEstimate,
    treated: VarianceEstimate,
    estimand: Estimand,
    alpha: f64,
    scaling: &ScalingParams,
) -> Result<ContrastEstimate> {
    validate_alpha(alpha)?;
    let (s0, s1) = (control.value_scaled, treated.value_scaled);
    let n = control.eif.values.len();
    let (estimate, eif, se) = match estimand {
        Estimand::Psi => {
            check_nonnegative(&treated)?;
            check_nonnegative(&control)?;
            let eif = eif_psi(&treated.eif, &control.eif, s1, s0)?;
            let r = scaling.range();
            let se = eif_se(&eif, n) * r;
            (r * (s1.sqrt() - s0.sqrt()), eif, se)
        }
        Estimand::Lambda => {
            if control.value_scaled <= VARIANCE_FLOOR {
                check_nonnegative(&control)?;
            }
            let eif = eif_lambda(&treated.eif, &control.eif, s1, s0)?;
            let se = eif_se(&eif, n);
            (s1 / s0, eif, se)
        }
    };
    if control.method != treated.method {
        return Err(Error::Contract("arm estimates come from different methods".into()));
    }
    Ok(ContrastEstimate {
        estimand,
        method: control.method,
        estimate,
        se,
        alpha,
        wald: wald(estimate, se, estimand.null_value(), alpha),
        arms: [control, treated],
        eif,
    })
}

/// Both arm estimates and their contrast from a shared set of nuisance blocks.
pub fn contrast_from_fits(
    fits: &[NuisanceFit],
    method: Method,
    estimand: Estimand,
    alpha: f64,
    scaling: &ScalingParams,
    fluctuation: Fluctuation,
) -> Result<ContrastEstimate> {
    let control = estimate_variance(fits, Arm::Control, method, scaling, fluctuation)?;
    let treated = estimate_variance(fits, Arm::Treated, method, scaling, fluctuation)?;
    contrast(control, treated, estimand, alpha, scaling)
}

/// Fits the nuisance blocks a method needs on an already scaled dataset.
///
/// Methods that agree on `is_cross_fit` get identical blocks for the same seed.
pub fn fit_blocks(scaled: &Dataset, cfg: &NuisanceConfig, cross_fit: bool, k: usize, seed: u64) -> Result<Vec<NuisanceFit>> {
    let plan = if cross_fit {
        SplitPlan::CrossFit(make_folds(scaled, k, derive_seed(seed, &[1]))?)
    } else {
        SplitPlan::Full
    };
    fit_planned(scaled, cfg, &plan, derive_seed(seed, &[2]))
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOptions {
    pub method: Method,
    pub estimand: Estimand,
    pub alpha: f64,
    /// Number of cross-fitting folds; ignored by full-sample methods.
    pub folds: usize,
    pub seed: u64,
    pub fluctuation: Fluctuation,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            method: Method::Tmle,
            estimand: Estimand::Psi,
            alpha: 0.05,
            folds: DEFAULT_FOLDS,
            seed: 0,
            fluctuation: Fluctuation::Covariate,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)?;
        if self.method.is_cross_fit() && self.folds < 2 {
            return Err(Error::Config(format!("cross-fitting needs at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }
}

/// Scales the outcome, fits nuisances and estimates the contrast on `d` (original units).
pub fn fit_contrast(d: &Dataset, cfg: &NuisanceConfig, opts: &AnalysisOptions) -> Result<(ContrastEstimate, ScalingParams)> {
    opts.validate()?;
    cfg.validate()?;
    let (scaled, scaling) = scale_outcome(d)?;
    let fits = fit_blocks(&scaled, cfg, opts.method.is_cross_fit(), opts.folds, opts.seed)?;
    let est = contrast_from_fits(&fits, opts.method, opts.estimand, opts.alpha, &scaling, opts.fluctuation)?;
    Ok((est, scaling))
}

/// [`fit_contrast`] packaged as a serializable report.
pub fn estimate_contrast(d: &Dataset, cfg: &NuisanceConfig, opts: &AnalysisOptions) -> Result<ContrastReport> {
    let (est, scaling) = fit_contrast(d, cfg, opts)?;
    Ok(ContrastReport::new(&est, d.n(), &scaling, cfg, opts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    /// Variance in squared outcome units (negative estimates reported as 0).
    pub variance: f64,
    pub variance_scaled: f64,
    pub se: f64,
    pub negative_flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub schema: String,
    pub estimand: Estimand,
    pub method: Method,
    pub estimate: f64,
    pub se: f64,
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub null_value: f64,
    pub n: usize,
    pub folds: Option<usize>,
    pub fluctuation: Option<Fluctuation>,
    pub arms: Vec<ArmSummary>,
    pub scaling: ScalingParams,
    pub nuisances: String,
    pub known_propensity: bool,
    pub fingerprint: String,
    pub seed: u64,
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl ContrastReport {
    pub fn new(est: &ContrastEstimate, n: usize, scaling: &ScalingParams, cfg: &NuisanceConfig, opts: &AnalysisOptions) -> Self {
        let folds = opts.method.is_cross_fit().then_some(opts.folds);
        let fluctuation = opts.method.is_targeted().then_some(opts.fluctuation);
        let nuisances = cfg.describe();
        let canonical = format!(
            "{nuisances}|{}|{}|{:?}|{}|{:?}",
            est.method, est.estimand, folds, est.alpha, fluctuation
        );
        ContrastReport {
            schema: REPORT_SCHEMA.to_string(),
            estimand: est.estimand,
            method: est.method,
            estimate: est.estimate,
            se: est.se,
            alpha: est.alpha,
            ci_low: est.wald.ci_low,
            ci_high: est.wald.ci_high,
            p_value: est.wald.p_value,
            null_value: est.estimand.null_value(),
            n,
            folds,
            fluctuation,
            arms: est
                .arms
                .iter()
                .map(|v| ArmSummary {
                    arm: v.arm,
                    variance: v.value_original,
                    variance_scaled: v.value_scaled,
                    se: v.se_original,
                    negative_flagged: v.negative_flagged,
                })
                .collect(),
            scaling: *scaling,
            nuisances,
            known_propensity: cfg.propensity.is_known(),
            fingerprint: format!("{:016x}", fnv1a(canonical.as_bytes())),
            seed: opts.seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ContrastReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Schema(format!("unsupported report schema `{}`", report.schema)));
        }
        Ok(report)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}
