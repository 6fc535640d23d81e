//! Estimators of potential-outcome variance contrasts.

pub mod dataset;
pub mod eif;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod nuisance;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use dataset::{Arm, Dataset, ScalingParams};
pub use estimators::{AnalysisOptions, ContrastEstimate, ContrastReport, Estimand, Fluctuation, Method};
pub use learners::LearnerSpec;
pub use nuisance::{NuisanceConfig, PropensitySpec};
pub use simulation::{Study, StudyConfig};
