//! Command-line arguments, the optional key = value settings file, and their
//! merge into resolved configurations. Flags take precedence over the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use diffvar_core::estimators::{AnalysisOptions, Estimand, Fluctuation, Method, DEFAULT_FOLDS};
use diffvar_core::learners::LearnerSpec;
use diffvar_core::nuisance::{NuisanceConfig, PropensitySpec, DEFAULT_CLIP_G};
use diffvar_core::simulation::{scenario, Study, StudyConfig, DESK_NS, DESK_REPS, FULL_NS, FULL_REPS};
use diffvar_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const DEFAULT_PROPENSITY: &str = "logit";
pub const DEFAULT_QBAR: &str = "stack(ols,ols2,forest)";
pub const DEFAULT_QBAR2: &str = "stack(ols2,forest)";

#[derive(Debug, Parser)]
#[command(name = "diffvar", version, about = "Inference on differences in potential-outcome variances")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a variance contrast on a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run one of the built-in simulation studies.
    Simulate(SimulateArgs),
}

#[derive(Debug, Default, Args)]
pub struct AnalyzeArgs {
    /// Settings file of `key = value` lines; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// `abs` (difference of standard deviations) or `rel` (variance ratio).
    #[arg(long)]
    pub estimand: Option<String>,
    /// os, tmle, cfos or cftmle.
    #[arg(long)]
    pub method: Option<String>,
    /// Cross-fitting folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learner spec or `known:<p>`.
    #[arg(long)]
    pub propensity: Option<String>,
    /// Learner spec for the outcome mean.
    #[arg(long)]
    pub qbar: Option<String>,
    /// Learner spec for the mean of the squared outcome.
    #[arg(long)]
    pub qbar2: Option<String>,
    /// Propensities are clipped into [clip-g, 1 - clip-g].
    #[arg(long)]
    pub clip_g: Option<f64>,
    /// Targeting submodel: covariate or weighted.
    #[arg(long)]
    pub fluctuation: Option<String>,
    /// Output directory for report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decimal places in the printed table.
    #[arg(long)]
    pub digits: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// 1, 2 or 3.
    #[arg(long)]
    pub study: Option<String>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Mismeasurement probability for study 3.
    #[arg(long)]
    pub m: Option<f64>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Use the full grid: 500 replicates at n up to 2000.
    #[arg(long)]
    pub full: bool,
    /// Worker threads (0 = all available).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated methods (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// A list given either as a TOML array or a comma-separated string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ListValue<T> {
    Many(Vec<T>),
    One(String),
}

impl<T: std::str::FromStr> ListValue<T> {
    fn into_vec(self, key: &str) -> Result<Vec<T>> {
        match self {
            ListValue::Many(v) => Ok(v),
            ListValue::One(s) => s
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad entry `{part}` for `{key}`")))
                })
                .collect(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct AnalyzeFile {
    data: Option<PathBuf>,
    outcome: Option<String>,
    treatment: Option<String>,
    covariates: Option<ListValue<String>>,
    estimand: Option<String>,
    method: Option<String>,
    k: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    propensity: Option<String>,
    qbar: Option<String>,
    qbar2: Option<String>,
    clip_g: Option<f64>,
    fluctuation: Option<String>,
    out: Option<PathBuf>,
    digits: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateFile {
    study: Option<u8>,
    scenario: Option<String>,
    m: Option<f64>,
    ns: Option<ListValue<usize>>,
    reps: Option<usize>,
    full: Option<bool>,
    threads: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    estimators: Option<ListValue<String>>,
    k: Option<usize>,
    alpha: Option<f64>,
}

fn read_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing required setting `{name}`")))
}

fn parse_fluctuation(s: &str) -> Result<Fluctuation> {
    match s.trim().to_ascii_lowercase().as_str() {
        "covariate" => Ok(Fluctuation::Covariate),
        "weighted" => Ok(Fluctuation::Weighted),
        _ => Err(Error::Config(format!("unknown fluctuation `{s}` (expected covariate or weighted)"))),
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub data: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub nuisance: NuisanceConfig,
    pub options: AnalysisOptions,
    pub out: PathBuf,
    pub digits: usize,
}

impl AnalyzeConfig {
    pub fn resolve(args: &AnalyzeArgs) -> Result<Self> {
        let file: AnalyzeFile = read_file(args.config.as_deref())?;
        let covariates = match (&args.covariates, file.covariates) {
            (Some(c), _) => c.clone(),
            (None, Some(c)) => c.into_vec("covariates")?,
            (None, None) => Vec::new(),
        };
        let pick = |flag: &Option<String>, file: Option<String>, default: &str| {
            flag.clone().or(file).unwrap_or_else(|| default.to_string())
        };
        let mut nuisance = NuisanceConfig::new(
            PropensitySpec::parse(&pick(&args.propensity, file.propensity, DEFAULT_PROPENSITY))?,
            LearnerSpec::parse(&pick(&args.qbar, file.qbar, DEFAULT_QBAR))?,
            LearnerSpec::parse(&pick(&args.qbar2, file.qbar2, DEFAULT_QBAR2))?,
        );
        nuisance.clip_g = args.clip_g.or(file.clip_g).unwrap_or(DEFAULT_CLIP_G);
        nuisance.validate()?;

        let options = AnalysisOptions {
            method: required(args.method.clone().or(file.method), "method")?.parse::<Method>()?,
            estimand: required(args.estimand.clone().or(file.estimand), "estimand")?.parse::<Estimand>()?,
            alpha: args.alpha.or(file.alpha).unwrap_or(0.05),
            folds: args.k.or(file.k).unwrap_or(DEFAULT_FOLDS),
            seed: args.seed.or(file.seed).unwrap_or(0),
            fluctuation: match args.fluctuation.clone().or(file.fluctuation) {
                Some(s) => parse_fluctuation(&s)?,
                None => Fluctuation::Covariate,
            },
        };
        options.validate()?;
        Ok(AnalyzeConfig {
            data: required(args.data.clone().or(file.data), "data")?,
            outcome: required(args.outcome.clone().or(file.outcome), "outcome")?,
            treatment: required(args.treatment.clone().or(file.treatment), "treatment")?,
            covariates,
            nuisance,
            options,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            digits: args.digits.or(file.digits).unwrap_or(3),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimulateConfig {
    pub study: StudyConfig,
    pub out: PathBuf,
    pub full: bool,
}

impl SimulateConfig {
    pub fn resolve(args: &SimulateArgs) -> Result<Self> {
        let file: SimulateFile = read_file(args.config.as_deref())?;
        let study: Study = match (&args.study, file.study) {
            (Some(s), _) => s.parse()?,
            (None, Some(v)) => Study::try_from(v)?,
            (None, None) => return Err(Error::Config("missing required setting `study`".into())),
        };
        let full = args.full || file.full.unwrap_or(false);
        let scenario = scenario(study, args.scenario.clone().or(file.scenario).as_deref())?;
        let ns = match (&args.ns, file.ns) {
            (Some(ns), _) => ns.clone(),
            (None, Some(ns)) => ns.into_vec("ns")?,
            (None, None) if full => FULL_NS.to_vec(),
            (None, None) => DESK_NS.to_vec(),
        };
        let methods = match (&args.estimators, file.estimators) {
            (Some(v), _) => v.clone(),
            (None, Some(v)) => v.into_vec("estimators")?,
            (None, None) => Method::ALL.iter().map(|m| m.code().to_string()).collect(),
        }
        .iter()
        .map(|s| s.parse::<Method>())
        .collect::<Result<Vec<_>>>()?;
        let cfg = StudyConfig {
            methods,
            ns,
            reps: args.reps.or(file.reps).unwrap_or(if full { FULL_REPS } else { DESK_REPS }),
            m: args.m.or(file.m).unwrap_or(0.0),
            seed: args.seed.or(file.seed).unwrap_or(0),
            folds: args.k.or(file.k).unwrap_or(DEFAULT_FOLDS),
            alpha: args.alpha.or(file.alpha).unwrap_or(0.05),
            threads: args.threads.or(file.threads).unwrap_or(0),
            ..StudyConfig::new(study, scenario)
        };
        if study != Study::Mismeasurement && cfg.m != 0.0 {
            return Err(Error::Config("--m applies to study 3 only".into()));
        }
        cfg.validate()?;
        Ok(SimulateConfig {
            study: cfg,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            full,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn settings(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_file() {
        let f = settings(
            "data = \"d.csv\"\noutcome = \"y\"\ntreatment = \"a\"\ncovariates = \"w1, w2\"\nestimand = \"rel\"\nmethod = \"os\"\nalpha = 0.1\n",
        );
        let args = AnalyzeArgs {
            config: Some(f.path().to_path_buf()),
            method: Some("cftmle".into()),
            ..Default::default()
        };
        let cfg = AnalyzeConfig::resolve(&args).unwrap();
        assert_eq!(cfg.options.method, Method::CrossFitTmle);
        assert_eq!(cfg.options.estimand, Estimand::Lambda);
        assert_eq!(cfg.options.alpha, 0.1);
        assert_eq!(cfg.covariates, ["w1", "w2"]);
    }

    #[test]
    fn unknown_keys_and_missing_values() {
        let f = settings("colour = \"red\"\n");
        let args = AnalyzeArgs {
            config: Some(f.path().to_path_buf()),
            ..Default::default()
        };
        assert!(matches!(AnalyzeConfig::resolve(&args), Err(Error::Config(_))));
        let err = AnalyzeConfig::resolve(&AnalyzeArgs::default()).unwrap_err();
        assert!(err.to_string().contains("method"));
    }

    #[test]
    fn simulate_defaults_and_full_grid() {
        let args = SimulateArgs {
            study: Some("2".into()),
            ..Default::default()
        };
        let cfg = SimulateConfig::resolve(&args).unwrap();
        assert_eq!(cfg.study.ns, DESK_NS);
        assert_eq!(cfg.study.reps, DESK_REPS);
        assert_eq!(cfg.study.methods.len(), 4);
        let full = SimulateConfig::resolve(&SimulateArgs { full: true, ..args }).unwrap();
        assert_eq!(full.study.ns, FULL_NS);
        assert_eq!(full.study.reps, FULL_REPS);
    }

    #[test]
    fn simulate_rejects_bad_input() {
        for args in [
            SimulateArgs { study: Some("4".into()), ..Default::default() },
            SimulateArgs { study: Some("1".into()), scenario: Some("nope".into()), ..Default::default() },
            SimulateArgs { study: Some("3".into()), m: Some(1.5), ..Default::default() },
            SimulateArgs { study: Some("3".into()), reps: Some(0), ..Default::default() },
        ] {
            assert!(matches!(SimulateConfig::resolve(&args), Err(Error::Config(_))));
        }
    }
}
