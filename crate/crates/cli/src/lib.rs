//! The `diffvar` command-line tool.

pub mod config;
pub mod plot;
pub mod table;

use std::io::Write;
use std::path::Path;

use diffvar_core::dataset::load_csv;
use diffvar_core::estimators::{estimate_contrast, ContrastReport};
use diffvar_core::simulation::{run_study, SimulationRun, SummaryRow};
use diffvar_core::{Error, Result};

use config::{AnalyzeConfig, Cli, Command, SimulateConfig};
use plot::{LineChart, Series};
use table::{render_table, TableRow};

/// Process exit status for an error: 2 for invalid input or configuration,
/// 3 for a degenerate estimate, 4 for numerical failures.
pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Schema(_)
        | Error::Validation { .. }
        | Error::DegenerateDesign(_)
        | Error::DegenerateOutcome(_)
        | Error::InfeasibleFolds { .. }
        | Error::Config(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => 2,
        Error::DegenerateVariance { .. } | Error::NegativeVariance { .. } => 3,
        Error::Rank { .. }
        | Error::Contract(_)
        | Error::Learner { .. }
        | Error::TiltNonConvergence { .. }
        | Error::Fold { .. } => 4,
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Analyze(args) => cmd_analyze(&AnalyzeConfig::resolve(args)?, out).map(|_| ()),
        Command::Simulate(args) => cmd_simulate(&SimulateConfig::resolve(args)?, out).map(|_| ()),
    }
}

pub fn cmd_analyze(cfg: &AnalyzeConfig, out: &mut dyn Write) -> Result<ContrastReport> {
    let d = load_csv(&cfg.data, &cfg.outcome, &cfg.treatment, &cfg.covariates)?;
    let report = estimate_contrast(&d, &cfg.nuisance, &cfg.options)?;
    std::fs::create_dir_all(&cfg.out)?;
    report.write_json(&cfg.out.join("report.json"))?;

    let what = match report.estimand {
        diffvar_core::estimators::Estimand::Psi => "difference of potential-outcome standard deviations",
        diffvar_core::estimators::Estimand::Lambda => "ratio of potential-outcome variances",
    };
    writeln!(out, "{what} (n = {})", report.n)?;
    if report.known_propensity {
        writeln!(out, "propensity known by design: {} (not estimated)", cfg.nuisance.propensity)?;
    }
    for arm in &report.arms {
        if arm.negative_flagged {
            writeln!(out, "warning: arm {} variance estimate is negative", arm.arm.indicator())?;
        }
    }
    write!(
        out,
        "{}",
        render_table(&[TableRow::from(&report)], cfg.digits, 100.0 * (1.0 - report.alpha))
    )?;
    Ok(report)
}

struct Metric {
    file: &'static str,
    title: &'static str,
    value: fn(&SummaryRow) -> f64,
}

const METRICS: [Metric; 5] = [
    Metric {
        file: "bias.svg",
        title: "Absolute empirical bias",
        value: |r| r.abs_bias,
    },
    Metric {
        file: "variance.svg",
        title: "Empirical variance",
        value: |r| r.emp_variance,
    },
    Metric {
        file: "scaled_bias.svg",
        title: "Root-n scaled absolute bias",
        value: |r| r.scaled_abs_bias,
    },
    Metric {
        file: "coverage.svg",
        title: "Empirical coverage",
        value: |r| r.coverage,
    },
    Metric {
        file: "power.svg",
        title: "Empirical power",
        value: |r| r.power,
    },
];

fn write_plots(cfg: &SimulateConfig, run: &SimulationRun, dir: &Path) -> Result<()> {
    let study = &cfg.study;
    let truth = run.truth.value(run.estimand);
    let at_null = truth == run.estimand.null_value();
    for metric in &METRICS {
        let reference = match metric.file {
            "coverage.svg" => 1.0 - study.alpha,
            "power.svg" if at_null => study.alpha,
            "power.svg" => 1.0,
            _ => 0.0,
        };
        let chart = LineChart {
            title: format!("{}: study {}, {}", metric.title, study.study, study.scenario.name),
            x_label: "sample size".into(),
            y_label: metric.title.to_lowercase(),
            x_ticks: study.ns.iter().map(|n| n.to_string()).collect(),
            series: study
                .methods
                .iter()
                .map(|&m| Series {
                    name: m.label().to_string(),
                    values: study
                        .ns
                        .iter()
                        .map(|&n| run.summary.row(m, n).map(metric.value).filter(|v| v.is_finite()))
                        .collect(),
                })
                .collect(),
            reference: Some(reference),
        };
        std::fs::write(dir.join(metric.file), chart.render())?;
    }
    Ok(())
}

pub fn cmd_simulate(cfg: &SimulateConfig, out: &mut dyn Write) -> Result<SimulationRun> {
    let run = run_study(&cfg.study)?;
    std::fs::create_dir_all(&cfg.out)?;
    run.summary.write_csv(&cfg.out.join("summary.csv"))?;
    run.write_raw_csv(&cfg.out.join("raw.csv"))?;
    write_plots(cfg, &run, &cfg.out)?;

    writeln!(
        out,
        "study {} ({}), truth {} = {:.4}, {} replicates{}",
        cfg.study.study,
        cfg.study.scenario.name,
        run.estimand,
        run.truth.value(run.estimand),
        cfg.study.reps,
        if cfg.full { ", full grid" } else { "" }
    )?;
    writeln!(out, "| n | Estimator | Abs. Bias | Variance | sqrt(n) Bias | Coverage | Power | Failures |")?;
    writeln!(out, "|---|---|---|---|---|---|---|---|")?;
    for r in &run.summary.rows {
        writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.3} | {:.3} | {} |",
            r.n,
            r.method.label(),
            r.abs_bias,
            r.emp_variance,
            r.scaled_abs_bias,
            r.coverage,
            r.power,
            r.n_failures
        )?;
    }
    writeln!(out, "wrote {}", cfg.out.display())?;
    Ok(run)
}
