//! Scenario configuration, run pipeline, persistence and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod run;

pub use acceptance::{validate_all, CriterionReport, ValidationOptions, ValidationReport};
pub use config::{parse_config, ConfigError, ScenarioConfig, TaskSpec, Violation};
pub use run::{run, RunError, RunManifest};
