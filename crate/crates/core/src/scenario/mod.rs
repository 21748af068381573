//! Scenario scripts, the built-in experiments, the runner and the
//! trajectory checks.

pub mod checks;
pub mod model;
pub mod runner;

pub use checks::{check_experiment1, check_experiment2, AssertionResult, MissingSeries};
pub use model::{parse_scenario, Action, Scenario, ScenarioEvent, SchemaError};
pub use runner::{run_fast, write_artifacts, RunError, RunOutcome, RunReport, Simulation};
