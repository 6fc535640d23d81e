//! Population values of the variance contrasts for each study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dgp::{outcome_moments, Study};
use crate::estimators::Estimand;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSource {
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthValues {
    /// Potential-outcome variances, control first.
    pub variances: [f64; 2],
    pub psi0: f64,
    pub lambda0: f64,
    pub source: TruthSource,
}

impl TruthValues {
    fn from_variances(variances: [f64; 2], source: TruthSource) -> Self {
        TruthValues {
            variances,
            psi0: variances[1].sqrt() - variances[0].sqrt(),
            lambda0: variances[1] / variances[0],
            source,
        }
    }

    pub fn value(&self, estimand: Estimand) -> f64 {
        match estimand {
            Estimand::Psi => self.psi0,
            Estimand::Lambda => self.lambda0,
        }
    }
}

/// Closed-form potential-outcome variances.
///
/// `W1^2` has variance 2 and `2 I(W2 < 0)` has variance 1 under standard
/// normal covariates; in the first study `W1 ~ Bern(0.3)` has variance 0.21
/// and `W2` enters with coefficient `1 + a + W1`.
pub fn truth(study: Study) -> TruthValues {
    let variances = match study {
        Study::DoubleRobustness => {
            let second_moment = |c: f64| c * c + 2.0 * c * 0.3 + 0.3;
            [0.21 + second_moment(1.0) + 1.0, 0.21 + second_moment(2.0) + 2.0]
        }
        Study::AsymptoticLinearity => [3.0 + 1.0, 3.0 + 1.0],
        // `4 V` adds 16 * 0.25 in the treated arm
        Study::Mismeasurement => [3.0 + 1.0, 3.0 + 4.0 + 1.0],
    };
    TruthValues::from_variances(variances, TruthSource::ClosedForm)
}

/// Monte Carlo variances with their standard errors, from `draws` full potential-outcome pairs.
pub fn monte_carlo_truth(study: Study, draws: usize, seed: u64) -> (TruthValues, [f64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = [Vec::with_capacity(draws), Vec::with_capacity(draws)];
    for _ in 0..draws {
        let w1: f64 = match study {
            Study::DoubleRobustness => f64::from(u8::from(rng.random_bool(0.3))),
            _ => StandardNormal.sample(&mut rng),
        };
        let w2: f64 = StandardNormal.sample(&mut rng);
        let v = f64::from(u8::from(rng.random_bool(0.5)));
        for a in 0..2u8 {
            let (mean, var) = outcome_moments(study, &[w1, w2, v], a);
            let e: f64 = StandardNormal.sample(&mut rng);
            samples[a as usize].push(mean + var.sqrt() * e);
        }
    }
    let stats = samples.map(|s| {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let m2 = s.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let m4 = s.iter().map(|y| (y - mean).powi(4)).sum::<f64>() / n;
        (m2, ((m4 - m2 * m2) / n).sqrt())
    });
    (
        TruthValues::from_variances([stats[0].0, stats[1].0], TruthSource::MonteCarlo { draws, seed }),
        [stats[0].1, stats[1].1],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let t1 = truth(Study::DoubleRobustness);
        assert!((t1.variances[1] - 7.71).abs() < 1e-12);
        assert!((t1.variances[0] - 3.11).abs() < 1e-12);
        assert!((t1.lambda0 - 2.479_099_678_456_591).abs() < 1e-12);
        // the published two-decimal value is a truncation
        assert_eq!((t1.lambda0 * 100.0).floor() / 100.0, 2.47);

        let t2 = truth(Study::AsymptoticLinearity);
        assert_eq!(t2.psi0, 0.0);
        assert_eq!(t2.lambda0, 1.0);

        let t3 = truth(Study::Mismeasurement);
        assert!((t3.psi0 - (8f64.sqrt() - 2.0)).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_agrees_with_closed_form() {
        for study in Study::ALL {
            let exact = truth(study);
            let (mc, se) = monte_carlo_truth(study, 400_000, 17);
            for a in 0..2 {
                let z = (mc.variances[a] - exact.variances[a]) / se[a];
                assert!(z.abs() < 3.0, "study {study} arm {a}: z = {z}");
            }
        }
    }
}
