//! Dose-finding with the continual reassessment method.
//!
//! The crate is organized around the estimation–allocation loop of a
//! phase I trial:
//!
//! - [`model`]: working dose-toxicity models and skeletons.
//! - [`inference`]: likelihood, priors, posterior quadrature and intervals.
//! - [`partition`]: the partition of the parameter space by recommended
//!   dose, plus convergence diagnostics.
//! - [`designs`]: allocation policies, from plain CRM to two-stage,
//!   randomized, two-group and most-successful-dose designs.
//! - [`simulator`]: replicated trials and operating characteristics.
//! - [`config`]: the JSON design document shared by the CLI and service.

pub mod config;
pub mod designs;
pub mod error;
pub mod history;
pub mod inference;
pub mod model;
pub mod partition;
pub mod quadrature;
pub mod rootfind;
pub mod simulator;

pub use config::{ConfigError, DesignConfig};
pub use designs::{next_dose, DesignPolicy, Recommendation, Stage};
pub use error::{CrmError, Result};
pub use history::{PatientRecord, Tally, TrialHistory};
pub use model::{ClassMember, ModelClass, ModelKind, Params, Skeleton, WorkingModel};
pub use simulator::{operating_characteristics, run_trial, OperatingCharacteristics, Scenario};
