//! Data-generating processes of the three simulation studies.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::learners::expit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Study {
    /// Observational design with a treatment-dependent residual variance.
    DoubleRobustness,
    /// Observational design with a constant treatment effect.
    AsymptoticLinearity,
    /// Randomised design with a possibly mismeasured effect modifier.
    Mismeasurement,
}

impl Study {
    pub const ALL: [Study; 3] = [Study::DoubleRobustness, Study::AsymptoticLinearity, Study::Mismeasurement];

    pub fn number(self) -> u8 {
        match self {
            Study::DoubleRobustness => 1,
            Study::AsymptoticLinearity => 2,
            Study::Mismeasurement => 3,
        }
    }

    pub fn covariate_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Study::Mismeasurement => &["w1", "w2", "v_obs"],
            _ => &["w1", "w2"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl From<Study> for u8 {
    fn from(s: Study) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for Study {
    type Error = Error;

    fn try_from(v: u8) -> Result<Study> {
        match v {
            1 => Ok(Study::DoubleRobustness),
            2 => Ok(Study::AsymptoticLinearity),
            3 => Ok(Study::Mismeasurement),
            _ => Err(Error::Config(format!("unknown study {v} (expected 1, 2 or 3)"))),
        }
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Study> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("unknown study `{s}` (expected 1, 2 or 3)")))?;
        Study::try_from(v)
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub study: Study,
    pub n: usize,
    /// Probability that the effect modifier is replaced by noise (study 3 only).
    pub m: f64,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(study: Study, n: usize, seed: u64) -> Self {
        DgpSpec { study, n, m: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::Config(format!("mismeasurement probability must be in [0, 1], got {}", self.m)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("sample size must be at least 2, got {}", self.n)));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn observational_propensity(w1: f64, w2: f64) -> f64 {
    expit((1.0 + w1 + w2) / 4.0)
}

fn step(w2: f64) -> f64 {
    if w2 < 0.0 {
        2.0
    } else {
        0.0
    }
}

/// Conditional outcome mean and variance given a covariate row and arm.
pub fn outcome_moments(study: Study, w: &[f64], a: u8) -> (f64, f64) {
    let af = f64::from(a);
    match study {
        Study::DoubleRobustness => {
            let (w1, w2) = (w[0], w[1]);
            (1.0 + af + w1 + w2 + af * w2 + w1 * w2, 1.0 + af)
        }
        Study::AsymptoticLinearity => (1.0 - 2.0 * af + w[0] * w[0] + step(w[1]), 1.0),
        // Uses the true modifier V, which the observed covariates do not carry when M = 1.
        Study::Mismeasurement => (1.0 - 2.0 * af + w[0] * w[0] + step(w[1]) + 4.0 * af * w[2], 1.0),
    }
}

/// True propensity, outcome mean and second moment for a covariate row.
///
/// For study 3 the row must hold the true modifier `V` in place of `V_obs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrueNuisance {
    pub g: f64,
    /// Control arm first.
    pub q1: [f64; 2],
    pub q2: [f64; 2],
}

pub fn true_nuisance(study: Study, w: &[f64]) -> TrueNuisance {
    let g = match study {
        Study::Mismeasurement => 0.5,
        _ => observational_propensity(w[0], w[1]),
    };
    let moments = Arm::BOTH.map(|arm| outcome_moments(study, w, arm.indicator()));
    TrueNuisance {
        g,
        q1: moments.map(|(m, _)| m),
        q2: moments.map(|(m, v)| m * m + v),
    }
}

/// Draws `spec.n` observations; identical for identical specs.
pub fn draw(spec: &DgpSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let p = spec.study.covariate_names().len();
    let mut w = DMatrix::zeros(n, p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (row, ai, mean, var) = match spec.study {
            Study::DoubleRobustness => {
                let w1 = f64::from(u8::from(rng.random_bool(0.3)));
                let w2 = normal(&mut rng);
                let ai = u8::from(rng.random_bool(observational_propensity(w1, w2)));
                let (mean, var) = outcome_moments(spec.study, &[w1, w2], ai);
                (vec![w1, w2], ai, mean, var)
            }
            Study::AsymptoticLinearity => {
                let (w1, w2) = (normal(&mut rng), normal(&mut rng));
                let ai = u8::from(rng.random_bool(observational_propensity(w1, w2)));
                let (mean, var) = outcome_moments(spec.study, &[w1, w2], ai);
                (vec![w1, w2], ai, mean, var)
            }
            Study::Mismeasurement => {
                let (w1, w2) = (normal(&mut rng), normal(&mut rng));
                let v = f64::from(u8::from(rng.random_bool(0.5)));
                let mismeasured = rng.random_bool(spec.m);
                let u = f64::from(u8::from(rng.random_bool(0.2)));
                let v_obs = if mismeasured { u } else { v };
                let ai = u8::from(rng.random_bool(0.5));
                let (mean, var) = outcome_moments(spec.study, &[w1, w2, v], ai);
                (vec![w1, w2, v_obs], ai, mean, var)
            }
        };
        for (j, v) in row.into_iter().enumerate() {
            w[(i, j)] = v;
        }
        a.push(ai);
        y.push(mean + var.sqrt() * normal(&mut rng));
    }
    Dataset::with_names(w, a, y, spec.study.covariate_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let spec = DgpSpec::new(Study::AsymptoticLinearity, 5, 42);
        assert_eq!(draw(&spec).unwrap(), draw(&spec).unwrap());
        let other = draw(&DgpSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(draw(&spec).unwrap().y(), other.y());
    }

    #[test]
    fn no_mismeasurement_keeps_modifier() {
        // with m = 0 the interaction shifts treated outcomes by exactly 4 V_obs
        let spec = DgpSpec {
            m: 0.0,
            ..DgpSpec::new(Study::Mismeasurement, 20_000, 7)
        };
        let d = draw(&spec).unwrap();
        let mut sums = [[0.0; 2]; 2];
        let mut counts = [[0.0; 2]; 2];
        for i in 0..d.n() {
            let (a, v) = (d.a()[i] as usize, d.w()[(i, 2)] as usize);
            let w1 = d.w()[(i, 0)];
            let resid = d.y()[i] - (w1 * w1 + step(d.w()[(i, 1)]));
            sums[a][v] += resid;
            counts[a][v] += 1.0;
        }
        let mean = |a: usize, v: usize| sums[a][v] / counts[a][v];
        assert!((mean(1, 1) - mean(1, 0) - 4.0).abs() < 0.1);
        assert!((mean(0, 1) - mean(0, 0)).abs() < 0.1);
    }

    #[test]
    fn first_study_variance_ratio_by_simulation() {
        // large-sample arm variances of the potential outcomes, drawn directly
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let mut acc = [[0.0; 2]; 2];
        for _ in 0..n {
            let w1 = f64::from(u8::from(rng.random_bool(0.3)));
            let w2: f64 = normal(&mut rng);
            for a in 0..2u8 {
                let (m, v) = outcome_moments(Study::DoubleRobustness, &[w1, w2], a);
                let y = m + v.sqrt() * normal(&mut rng);
                acc[a as usize][0] += y;
                acc[a as usize][1] += y * y;
            }
        }
        let var = |a: usize| acc[a][1] / n as f64 - (acc[a][0] / n as f64).powi(2);
        let ratio = var(1) / var(0);
        assert!((ratio / 2.479 - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn observed_arm_frequencies() {
        let d = draw(&DgpSpec::new(Study::Mismeasurement, 10_000, 1)).unwrap();
        let treated = d.a().iter().filter(|&&a| a == 1).count() as f64 / 1e4;
        assert!((treated - 0.5).abs() < 0.02);
        assert_eq!(d.covariate_names(), ["w1", "w2", "v_obs"]);
    }

    #[test]
    fn true_nuisance_values() {
        let t = true_nuisance(Study::AsymptoticLinearity, &[1.0, -0.5]);
        assert!((t.g - expit(0.375)).abs() < 1e-15);
        assert_eq!(t.q1, [4.0, 2.0]);
        assert_eq!(t.q2, [17.0, 5.0]);
    }

    #[test]
    fn parse_study() {
        assert_eq!("2".parse::<Study>().unwrap(), Study::AsymptoticLinearity);
        assert!("4".parse::<Study>().is_err());
    }
}
