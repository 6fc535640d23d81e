//! Replication engine and empirical performance metrics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{draw, DgpSpec, Study};
use super::truth::{truth, TruthValues};
use crate::dataset::scale_outcome;
use crate::error::{Error, Result};
use crate::estimators::{contrast_from_fits, fit_blocks, Estimand, Fluctuation, Method, DEFAULT_FOLDS};
use crate::learners::LearnerSpec;
use crate::nuisance::{NuisanceConfig, PropensitySpec};
use crate::rng::derive_seed;

/// A named nuisance specification for one study.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub nuisance: NuisanceConfig,
}

/// Forest size inside the second study's stacked libraries.
pub const STACK_FOREST: &str = "forest(trees=100)";

/// Scenario names per study; the first is the default.
pub fn scenario_names(study: Study) -> &'static [&'static str] {
    match study {
        Study::DoubleRobustness => &["all-correct", "g-correct", "q-correct", "all-misspecified"],
        Study::AsymptoticLinearity => &["stacking"],
        Study::Mismeasurement => &["linear"],
    }
}

fn learner(text: &str) -> LearnerSpec {
    LearnerSpec::parse(text).expect("built-in learner spec parses")
}

pub fn scenario(study: Study, name: Option<&str>) -> Result<Scenario> {
    let names = scenario_names(study);
    let name = name.unwrap_or(names[0]);
    let cfg = |g: &str, q1: &str, q2: &str| {
        NuisanceConfig::new(PropensitySpec::Learner(learner(g)), learner(q1), learner(q2))
    };
    let nuisance = match (study, name) {
        (Study::DoubleRobustness, "all-correct") => cfg("logit", "forest", "forest"),
        (Study::DoubleRobustness, "g-correct") => cfg("logit", "mean", "mean"),
        // the propensity model omits w1
        (Study::DoubleRobustness, "q-correct") => cfg("logit[1]", "forest", "forest"),
        (Study::DoubleRobustness, "all-misspecified") => cfg("logit[1]", "mean", "mean"),
        (Study::AsymptoticLinearity, "stacking") => cfg(
            &format!("stack(logit,logit2,{STACK_FOREST})"),
            &format!("stack(ols,ols2,{STACK_FOREST})"),
            &format!("stack(ols2,{STACK_FOREST})"),
        ),
        (Study::Mismeasurement, "linear") => {
            NuisanceConfig::new(PropensitySpec::KnownConstant(0.5), learner("ols"), learner("ols"))
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown scenario `{name}` for study {study} (expected one of {})",
                names.join(", ")
            )))
        }
    };
    Ok(Scenario {
        name: name.to_string(),
        nuisance,
    })
}

/// Contrast targeted by each study.
pub fn study_estimand(study: Study) -> Estimand {
    match study {
        Study::DoubleRobustness => Estimand::Lambda,
        _ => Estimand::Psi,
    }
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub study: Study,
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub ns: Vec<usize>,
    pub reps: usize,
    /// Mismeasurement probability (study 3).
    pub m: f64,
    pub seed: u64,
    pub folds: usize,
    pub alpha: f64,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    pub fluctuation: Fluctuation,
}

pub const DESK_NS: [usize; 4] = [125, 250, 500, 1000];
pub const FULL_NS: [usize; 5] = [125, 250, 500, 1000, 2000];
pub const DESK_REPS: usize = 200;
pub const FULL_REPS: usize = 500;

impl StudyConfig {
    pub fn new(study: Study, scenario: Scenario) -> Self {
        StudyConfig {
            study,
            scenario,
            methods: Method::ALL.to_vec(),
            ns: DESK_NS.to_vec(),
            reps: DESK_REPS,
            m: 0.0,
            seed: 0,
            folds: DEFAULT_FOLDS,
            alpha: 0.05,
            threads: 0,
            fluctuation: Fluctuation::Covariate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if self.methods.is_empty() || self.ns.is_empty() {
            return Err(Error::Config("at least one estimator and one sample size are required".into()));
        }
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::Config(format!("mismeasurement probability must be in [0, 1], got {}", self.m)));
        }
        if let Some(n) = self.ns.iter().find(|&&n| n < 2 * self.folds.max(2)) {
            return Err(Error::Config(format!("sample size {n} is too small")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        self.scenario.nuisance.validate()
    }
}

/// One estimator applied to one simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub study: Study,
    pub scenario: String,
    pub method: Method,
    pub n: usize,
    pub replicate: usize,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p_value: Option<f64>,
    pub truth: f64,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub study: Study,
    pub scenario: String,
    pub method: Method,
    pub n: usize,
    pub abs_bias: f64,
    pub emp_variance: f64,
    pub scaled_abs_bias: f64,
    pub coverage: f64,
    pub power: f64,
    pub n_reps: usize,
    pub n_failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSummary {
    pub rows: Vec<SummaryRow>,
}

impl SimulationSummary {
    pub fn row(&self, method: Method, n: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.n == n)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }
}

#[derive(Clone, Debug)]
pub struct SimulationRun {
    pub estimand: Estimand,
    pub truth: TruthValues,
    pub records: Vec<ReplicateRecord>,
    pub summary: SimulationSummary,
}

impl SimulationRun {
    pub fn write_raw_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.records)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn failed(base: &ReplicateRecord, message: String) -> ReplicateRecord {
    ReplicateRecord {
        error: Some(message),
        ..base.clone()
    }
}

fn run_replicate(cfg: &StudyConfig, estimand: Estimand, truth_value: f64, n: usize, rep: usize) -> Vec<ReplicateRecord> {
    let rep_seed = derive_seed(cfg.seed, &[n as u64, rep as u64]);
    let blank = |method| ReplicateRecord {
        study: cfg.study,
        scenario: cfg.scenario.name.clone(),
        method,
        n,
        replicate: rep,
        estimate: None,
        se: None,
        ci_low: None,
        ci_high: None,
        p_value: None,
        truth: truth_value,
        covered: None,
        error: None,
    };
    let spec = DgpSpec {
        study: cfg.study,
        n,
        m: cfg.m,
        seed: derive_seed(rep_seed, &[0]),
    };
    let prepared = draw(&spec).and_then(|d| scale_outcome(&d));
    let (scaled, scaling) = match prepared {
        Ok(v) => v,
        Err(e) => return cfg.methods.iter().map(|&m| failed(&blank(m), e.to_string())).collect(),
    };

    // Methods sharing a split plan share one set of nuisance fits.
    let mut out: Vec<Option<ReplicateRecord>> = vec![None; cfg.methods.len()];
    for cross_fit in [false, true] {
        let group: Vec<usize> = (0..cfg.methods.len())
            .filter(|&i| cfg.methods[i].is_cross_fit() == cross_fit)
            .collect();
        if group.is_empty() {
            continue;
        }
        let fits = fit_blocks(&scaled, &cfg.scenario.nuisance, cross_fit, cfg.folds, derive_seed(rep_seed, &[1]));
        for i in group {
            let method = cfg.methods[i];
            let base = blank(method);
            let est = match &fits {
                Ok(fits) => contrast_from_fits(fits, method, estimand, cfg.alpha, &scaling, cfg.fluctuation)
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            out[i] = Some(match est {
                Ok(c) => ReplicateRecord {
                    estimate: Some(c.estimate),
                    se: Some(c.se),
                    ci_low: Some(c.wald.ci_low),
                    ci_high: Some(c.wald.ci_high),
                    p_value: Some(c.wald.p_value),
                    covered: Some(c.wald.ci_low <= truth_value && truth_value <= c.wald.ci_high),
                    ..base
                },
                Err(message) => failed(&base, message),
            });
        }
    }
    out.into_iter().map(|r| r.expect("every method assigned")).collect()
}

/// Aggregates the records of one (method, n) cell.
pub fn summarize(records: &[&ReplicateRecord], alpha: f64) -> (f64, f64, f64, f64, usize) {
    let ok: Vec<&ReplicateRecord> = records.iter().copied().filter(|r| r.estimate.is_some()).collect();
    let k = ok.len() as f64;
    if ok.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN, records.len());
    }
    let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
    let mean = est.iter().sum::<f64>() / k;
    let emp_variance = if ok.len() > 1 {
        est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let coverage = ok.iter().filter(|r| r.covered == Some(true)).count() as f64 / k;
    let power = ok.iter().filter(|r| r.p_value.is_some_and(|p| p < alpha)).count() as f64 / k;
    let abs_bias = (mean - ok[0].truth).abs();
    (abs_bias, emp_variance, coverage, power, records.len() - ok.len())
}

/// Runs every (sample size, replicate) pair and aggregates per estimator and sample size.
///
/// Each replicate draws from its own seed derived from `(seed, n, replicate)`,
/// so results do not depend on the thread count.
pub fn run_study(cfg: &StudyConfig) -> Result<SimulationRun> {
    cfg.validate()?;
    let estimand = study_estimand(cfg.study);
    let truth = truth(cfg.study);
    let truth_value = truth.value(estimand);
    let jobs: Vec<(usize, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let nested: Vec<Vec<ReplicateRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(n, rep)| run_replicate(cfg, estimand, truth_value, n, rep))
            .collect()
    });
    let records: Vec<ReplicateRecord> = nested.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &n in &cfg.ns {
        for &method in &cfg.methods {
            let cell: Vec<&ReplicateRecord> = records.iter().filter(|r| r.n == n && r.method == method).collect();
            let (abs_bias, emp_variance, coverage, power, n_failures) = summarize(&cell, cfg.alpha);
            if n_failures > 0 {
                log::info!("study {} n={n} {method}: {n_failures} failed replicates", cfg.study);
            }
            rows.push(SummaryRow {
                study: cfg.study,
                scenario: cfg.scenario.name.clone(),
                method,
                n,
                abs_bias,
                emp_variance,
                scaled_abs_bias: (n as f64).sqrt() * abs_bias,
                coverage,
                power,
                n_reps: cell.len(),
                n_failures,
            });
        }
    }
    Ok(SimulationRun {
        estimand,
        truth,
        records,
        summary: SimulationSummary { rows },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(study: Study) -> StudyConfig {
        StudyConfig {
            ns: vec![60],
            reps: 4,
            seed: 5,
            ..StudyConfig::new(study, scenario(study, None).unwrap())
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = small(Study::Mismeasurement);
        cfg.threads = 1;
        let one = run_study(&cfg).unwrap();
        cfg.threads = 3;
        let three = run_study(&cfg).unwrap();
        assert_eq!(one.records, three.records);
        assert_eq!(one.summary, three.summary);
    }

    #[test]
    fn summary_accounts_for_every_replicate() {
        let run = run_study(&small(Study::Mismeasurement)).unwrap();
        assert_eq!(run.summary.rows.len(), 4);
        for row in &run.summary.rows {
            assert_eq!(row.n_reps, 4);
            assert!(row.n_failures <= row.n_reps);
            if row.n_failures < row.n_reps {
                assert!((0.0..=1.0).contains(&row.coverage));
                assert!((0.0..=1.0).contains(&row.power));
            }
        }
    }

    #[test]
    fn summary_metrics_by_hand() {
        let rec = |estimate: Option<f64>, covered, p| ReplicateRecord {
            study: Study::AsymptoticLinearity,
            scenario: "x".into(),
            method: Method::OneStep,
            n: 100,
            replicate: 0,
            estimate,
            se: None,
            ci_low: None,
            ci_high: None,
            p_value: p,
            truth: 1.0,
            covered,
            error: None,
        };
        let rs = [
            rec(Some(1.5), Some(true), Some(0.2)),
            rec(Some(2.5), Some(false), Some(0.01)),
            rec(None, None, None),
        ];
        let refs: Vec<&ReplicateRecord> = rs.iter().collect();
        let (bias, var, cov, power, failures) = summarize(&refs, 0.05);
        assert!((bias - 1.0).abs() < 1e-15);
        assert!((var - 0.5).abs() < 1e-15);
        assert_eq!((cov, power, failures), (0.5, 0.5, 1));
    }

    #[test]
    fn unknown_scenario() {
        assert!(matches!(scenario(Study::AsymptoticLinearity, Some("forest")), Err(Error::Config(_))));
        for study in Study::ALL {
            for name in scenario_names(study) {
                assert!(scenario(study, Some(name)).is_ok());
            }
        }
    }
}
