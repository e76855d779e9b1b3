//! The JSON design document: skeleton, working model and allocation policy.
//!
//! ```json
//! {
//!   "skeleton": { "doses": ["10mg", "20mg", "40mg"], "alpha": [0.05, 0.12, 0.25] },
//!   "model": { "kind": "power_exp" },
//!   "design": {
//!     "target": 0.2,
//!     "inference": { "mode": "bayes", "prior": { "kind": "normal", "mean": 0.0, "variance": 1.34 } }
//!   }
//! }
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::designs::DesignPolicy;
use crate::error::CrmError;
use crate::model::{ModelKind, Skeleton, WorkingModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub skeleton: Skeleton,
    pub model: ModelSpec,
    pub design: DesignPolicy,
    /// Trial size; a session closes itself after this many patients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_patients: Option<usize>,
    /// Seed for randomized allocation.
    #[serde(default)]
    pub seed: u64,
}

/// A problem with one field of a design document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigError {
    /// Dotted path such as `design.inference.prior.variance`; empty when
    /// the document is not valid JSON at all.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { field: field.into(), message: message.into() }
    }
}

impl DesignConfig {
    pub fn new(skeleton: Skeleton, kind: ModelKind, design: DesignPolicy) -> Self {
        DesignConfig {
            name: None,
            skeleton,
            model: ModelSpec { kind, bounds: None },
            design,
            max_patients: None,
            seed: 0,
        }
    }

    /// Parses and validates a document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: DesignConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            ConfigError::at(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: DesignConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { String::new() } else { path };
            ConfigError::at(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn working_model(&self) -> Result<WorkingModel, ConfigError> {
        let m = WorkingModel::new(self.model.kind, self.skeleton.clone());
        match self.model.bounds {
            Some((lo, hi)) => {
                m.with_bounds(lo, hi).map_err(|e| ConfigError::at("model.bounds", e.to_string()))
            }
            None => Ok(m),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.working_model()?;
        if self.max_patients == Some(0) {
            return Err(ConfigError::at("max_patients", "must be at least 1"));
        }
        self.design.validate(&model).map_err(|e| match e {
            CrmError::InvalidField { field, message } => ConfigError::at(format!("design.{field}"), message),
            other => ConfigError::at("design", other.to_string()),
        })
    }
}
