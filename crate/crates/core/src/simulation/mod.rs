//! Monte Carlo studies of the estimators: data-generating processes, true
//! contrast values and a deterministic parallel replication engine.

pub mod dgp;
pub mod engine;
pub mod truth;

pub use dgp::{draw, true_nuisance, DgpSpec, Study, TrueNuisance};
pub use engine::{
    run_study, scenario, scenario_names, study_estimand, ReplicateRecord, Scenario, SimulationRun, SimulationSummary,
    StudyConfig, SummaryRow, DESK_NS, DESK_REPS, FULL_NS, FULL_REPS,
};
pub use truth::{monte_carlo_truth, truth, TruthSource, TruthValues};
