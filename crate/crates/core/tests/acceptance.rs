//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::time::Instant;

use diffvar_core::dataset::{scale_outcome, Arm, Dataset, ScalingParams};
use diffvar_core::eif::eif_sigma2_values;
use diffvar_core::estimators::{
    fit_contrast, one_step_sigma2, tmle_sigma2, AnalysisOptions, Estimand, Fluctuation, Method,
};
use diffvar_core::learners::{Degree, LearnerSpec};
use diffvar_core::nuisance::{clever_covariate, fit_nuisances, NuisanceConfig, PropensitySpec};
use diffvar_core::simulation::{
    draw, run_study, scenario, scenario_names, true_nuisance, truth, DgpSpec, SimulationRun, Study, StudyConfig,
};
use nalgebra::DMatrix;

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn study_run(study: Study, name: Option<&str>, ns: Vec<usize>, methods: Vec<Method>, m: f64, seed: u64) -> SimulationRun {
    let cfg = StudyConfig {
        ns,
        reps: 200,
        methods,
        m,
        seed,
        ..StudyConfig::new(study, scenario(study, name).unwrap())
    };
    run_study(&cfg).unwrap()
}

/// 1. Bias of the ratio under each nuisance specification.
fn double_robustness(l: &mut Ledger) {
    let lambda0 = 2.479;
    let methods = vec![Method::OneStep, Method::Tmle];
    for &name in scenario_names(Study::DoubleRobustness) {
        let run = study_run(Study::DoubleRobustness, Some(name), vec![2000], methods.clone(), 0.0, 101);
        for &method in &methods {
            let row = run.summary.row(method, 2000).unwrap();
            let mean = run
                .records
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| r.estimate)
                .sum::<f64>()
                / (row.n_reps - row.n_failures) as f64;
            let bias = (mean - lambda0).abs();
            if name == "all-misspecified" {
                l.check(
                    "C1b",
                    bias >= 0.3,
                    format!("study 1 {name} {method} n=2000: |bias| = {bias:.4} (required >= 0.3), failures {}", row.n_failures),
                );
            } else {
                l.check(
                    "C1a",
                    bias <= 0.15,
                    format!("study 1 {name} {method} n=2000: |bias| = {bias:.4} (required <= 0.15), failures {}", row.n_failures),
                );
            }
        }
    }
}

/// 2 and 4. Coverage, root-n bias and type-I error of the cross-fitted estimators.
fn asymptotic_linearity(l: &mut Ledger) {
    let methods = vec![Method::CrossFitOneStep, Method::CrossFitTmle];
    let run = study_run(Study::AsymptoticLinearity, None, vec![500, 1000], methods.clone(), 0.0, 202);
    for &method in &methods {
        let small = run.summary.row(method, 500).unwrap();
        let large = run.summary.row(method, 1000).unwrap();
        l.check(
            "C2a",
            (0.91..=0.98).contains(&large.coverage),
            format!("study 2 {method} n=1000: coverage = {:.3} (required in [0.91, 0.98]), failures {}", large.coverage, large.n_failures),
        );
        l.check(
            "C2b",
            large.scaled_abs_bias <= 1.25 * small.scaled_abs_bias,
            format!(
                "study 2 {method}: sqrt(n)|bias| = {:.4} at n=500, {:.4} at n=1000 (required <= 1.25x)",
                small.scaled_abs_bias, large.scaled_abs_bias
            ),
        );
        l.check(
            "C4",
            (0.015..=0.105).contains(&large.power),
            format!("study 2 {method} n=1000: rejection rate of psi = 0 is {:.3} (required in [0.015, 0.105])", large.power),
        );
    }
}

/// 3. Power with a fully mismeasured modifier.
fn mismeasurement_power(l: &mut Ledger) {
    let methods = vec![Method::OneStep, Method::Tmle];
    let run = study_run(Study::Mismeasurement, None, vec![250], methods.clone(), 1.0, 303);
    for method in methods {
        let row = run.summary.row(method, 250).unwrap();
        l.check(
            "C3",
            row.power >= 0.80,
            format!("study 3 m=1 {method} n=250: power = {:.3} (required >= 0.80)", row.power),
        );
    }
}

/// 5. The targeted fit solves the empirical influence-function equation.
fn solved_score(l: &mut Ledger) {
    let cfg = NuisanceConfig::new(
        PropensitySpec::Learner(LearnerSpec::Logistic(Degree::Main)),
        LearnerSpec::Ols(Degree::Quadratic),
        LearnerSpec::Ols(Degree::Quadratic),
    );
    let mut worst: f64 = 0.0;
    let mut errors = 0;
    for seed in 0..100u64 {
        let study = if seed % 2 == 0 { Study::DoubleRobustness } else { Study::AsymptoticLinearity };
        let d = draw(&DgpSpec::new(study, 200, 5000 + seed)).unwrap();
        let (scaled, scaling) = scale_outcome(&d).unwrap();
        let all: Vec<usize> = (0..200).collect();
        let nf = fit_nuisances(&scaled, &cfg, &all, &all, seed).unwrap();
        for arm in Arm::BOTH {
            match tmle_sigma2(&nf, arm, &scaling, Fluctuation::Covariate) {
                Ok(v) => worst = worst.max(v.eif.mean().abs()),
                Err(_) => errors += 1,
            }
        }
    }
    l.check(
        "C5",
        worst <= 1e-6 && errors == 0,
        format!("100 datasets n=200: max |E_n[EIF]| after targeting = {worst:.2e}, errors {errors} (required <= 1e-6)"),
    );
}

/// 6. One-step estimate against a scalar evaluation of its defining display.
fn oracle_equivalence(l: &mut Ledger) {
    let w = [0.3, -1.2, 0.8, 2.1, -0.4, 0.0, 1.5, -2.2];
    let a = [1u8, 0, 1, 0, 1, 0, 1, 0];
    let y = [0.21, 0.55, 0.73, 0.12, 0.94, 0.38, 0.47, 0.66];
    let d = Dataset::new(DMatrix::from_column_slice(8, 1, &w), a.to_vec(), y.to_vec()).unwrap();
    let cfg = NuisanceConfig::new(PropensitySpec::KnownConstant(0.5), LearnerSpec::Mean, LearnerSpec::Mean);
    let all: Vec<usize> = (0..8).collect();
    let nf = fit_nuisances(&d, &cfg, &all, &all, 0).unwrap();
    let unit = ScalingParams { y_min: 0.0, y_max: 1.0 };
    let mut worst: f64 = 0.0;
    for arm in [0u8, 1] {
        // saturated nuisances, written out by hand
        let on: Vec<usize> = (0..8).filter(|&i| a[i] == arm).collect();
        let q1 = on.iter().map(|&i| y[i]).sum::<f64>() / on.len() as f64;
        let q2 = on.iter().map(|&i| y[i] * y[i]).sum::<f64>() / on.len() as f64;
        let h = |i: usize| if a[i] == arm { 2.0 } else { 0.0 };
        let mu = (0..8).map(|i| h(i) * (y[i] - q1) + q1).sum::<f64>() / 8.0;
        let display = (0..8)
            .map(|i| h(i) * (y[i] * y[i] - q2 + 2.0 * mu * (q1 - y[i])) + q2 - 2.0 * q1 * mu)
            .sum::<f64>()
            / 8.0
            + mu * mu;
        let arm = if arm == 1 { Arm::Treated } else { Arm::Control };
        let got = one_step_sigma2(&nf, arm, &unit).unwrap().value_scaled;
        worst = worst.max((got - display).abs());
    }
    l.check("C6", worst <= 1e-12, format!("8-row oracle: max |difference| = {worst:.2e} (required <= 1e-12)"));
}

/// 7. Affine outcome transformations with affine-equivariant learners.
fn equivariance(l: &mut Ledger) {
    let base = draw(&DgpSpec::new(Study::AsymptoticLinearity, 400, 77)).unwrap();
    // one distant outcome per arm keeps fitted regressions inside the clipping range
    let n = base.n();
    let mut w = base.w().clone().insert_rows(n, 2, 0.0);
    w[(n, 0)] = 0.1;
    let mut a = base.a().to_vec();
    a.extend([1, 0]);
    let mut y = base.y().to_vec();
    y.extend([60.0, -60.0]);
    let d = Dataset::new(w, a, y).unwrap();
    let cfg = NuisanceConfig::new(
        PropensitySpec::KnownConstant(0.5),
        LearnerSpec::Ols(Degree::Main),
        LearnerSpec::Ols(Degree::Main),
    );
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (scale, shift) in [(3.0, 7.0), (-2.0, 0.0), (0.1, -5.0)] {
        let moved = d.with_outcome(d.y().iter().map(|v| scale * v + shift).collect()).unwrap();
        for method in Method::ALL {
            // the logistic fluctuation is not symmetric under reflection of the outcome
            if method.is_targeted() && scale < 0.0 {
                continue;
            }
            for estimand in [Estimand::Psi, Estimand::Lambda] {
                let opts = AnalysisOptions {
                    method,
                    estimand,
                    seed: 4,
                    ..Default::default()
                };
                let before = fit_contrast(&d, &cfg, &opts).unwrap().0.estimate;
                let after = fit_contrast(&moved, &cfg, &opts).unwrap().0.estimate;
                let factor = if estimand == Estimand::Psi { scale.abs() } else { 1.0 };
                worst = worst.max((after - factor * before).abs() / (factor * before).abs());
                checked += 1;
            }
        }
    }
    l.check(
        "C7",
        worst <= 1e-8,
        format!("{checked} transformed fits: max relative deviation = {worst:.2e} (required <= 1e-8)"),
    );
}

/// 8. Influence function at the true nuisances has mean zero up to sampling error.
fn oracle_mean_zero(l: &mut Ledger) {
    let variances = truth(Study::AsymptoticLinearity).variances;
    let means = [3.0, 1.0];
    let mut passed = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let d = draw(&DgpSpec::new(Study::AsymptoticLinearity, 5000, 9000 + seed)).unwrap();
        let (scaled, s) = scale_outcome(&d).unwrap();
        let (lo, r) = (s.y_min, s.range());
        let rows: Vec<_> = (0..d.n())
            .map(|i| true_nuisance(Study::AsymptoticLinearity, &[d.w()[(i, 0)], d.w()[(i, 1)]]))
            .collect();
        let g: Vec<f64> = rows.iter().map(|t| t.g).collect();
        let cc = clever_covariate(d.a(), &g);
        let mut ok = true;
        for arm in Arm::BOTH {
            let k = arm.indicator() as usize;
            let q1: Vec<f64> = rows.iter().map(|t| (t.q1[k] - lo) / r).collect();
            let q2: Vec<f64> = rows
                .iter()
                .map(|t| (t.q2[k] - 2.0 * lo * t.q1[k] + lo * lo) / (r * r))
                .collect();
            let mu = (means[k] - lo) / r;
            let sigma2 = variances[k] / (r * r);
            let eif = eif_sigma2_values(cc.h(arm), scaled.y(), &q1, &q2, mu, sigma2);
            let m = eif.len() as f64;
            let mean = eif.iter().sum::<f64>() / m;
            let sd = (eif.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            ok &= mean.abs() <= 4.0 * sd / m.sqrt();
        }
        passed += usize::from(ok);
    }
    let frac = passed as f64 / seeds as f64;
    l.check(
        "C8",
        frac >= 0.90,
        format!("study 2 n=5000 oracle nuisances: {passed}/{seeds} seeds with |mean| <= 4 SE in both arms (required >= 90%)"),
    );
}

fn main() {
    let mut l = Ledger { failures: 0 };
    let sections: [(&str, fn(&mut Ledger)); 7] = [
        ("oracle equivalence", oracle_equivalence),
        ("equivariance", equivariance),
        ("solved score", solved_score),
        ("oracle mean zero", oracle_mean_zero),
        ("mismeasurement power", mismeasurement_power),
        ("double robustness", double_robustness),
        ("asymptotic linearity and type-I error", asymptotic_linearity),
    ];
    for (name, run) in sections {
        let t = Instant::now();
        run(&mut l);
        println!("       ({name}: {:.1}s)", t.elapsed().as_secs_f64());
    }
    if l.failures > 0 {
        println!("{} acceptance check(s) failed", l.failures);
        std::process::exit(1);
    }
    println!("all acceptance checks passed");
}
