//! JSON bodies of the trial-session HTTP API.
//!
//! Dose levels on the wire are one-based (`level`); the engine works with
//! zero-based indices. Conversions live here so the service and its
//! clients agree on them.

use chrono::{DateTime, Utc};
use crm_core::designs::RandomizationDraw;
use crm_core::inference::ConfidenceInterval;
use crm_core::{DesignConfig, PatientRecord, Recommendation, Stage};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStage {
    StageOne,
    ModelBased,
    Closed,
}

impl From<Stage> for SessionStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::StageOne => SessionStage::StageOne,
            Stage::ModelBased => SessionStage::ModelBased,
        }
    }
}

/// One patient's outcome as entered by the trial team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeInput {
    pub level: usize,
    pub toxicity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
    /// Accept a level other than the outstanding recommendation.
    #[serde(default, rename = "override", skip_serializing_if = "is_false")]
    pub override_level: bool,
    /// Group of the next patient, for two-group designs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_group: Option<u8>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl OutcomeInput {
    pub fn new(level: usize, toxicity: bool) -> Self {
        OutcomeInput {
            level,
            toxicity,
            grade: None,
            response: None,
            group: None,
            override_level: false,
            next_group: None,
        }
    }

    pub fn with_grade(mut self, grade: u8) -> Self {
        self.grade = Some(grade);
        self
    }

    pub fn overridden(mut self) -> Self {
        self.override_level = true;
        self
    }

    /// Zero-based record, or `None` for level 0.
    pub fn to_record(&self) -> Option<PatientRecord> {
        Some(PatientRecord {
            dose: self.level.checked_sub(1)?,
            toxicity: self.toxicity,
            group: self.group,
            grade: self.grade,
            response: self.response,
        })
    }
}

/// A hypothetical patient. Without a level the patient is given whatever
/// the design recommends at that point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypotheticalOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub toxicity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
}

impl HypotheticalOutcome {
    pub fn at_recommended(toxicity: bool) -> Self {
        HypotheticalOutcome { level: None, toxicity, grade: None, response: None, group: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub outcomes: Vec<HypotheticalOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_group: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalView {
    pub level: usize,
    pub confidence: f64,
    pub lower: f64,
    pub upper: f64,
    pub variance: f64,
}

impl From<&ConfidenceInterval> for IntervalView {
    fn from(ci: &ConfidenceInterval) -> Self {
        IntervalView {
            level: ci.dose + 1,
            confidence: ci.level,
            lower: ci.lower,
            upper: ci.upper,
            variance: ci.variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizationView {
    pub base_level: usize,
    /// `true` when the draw moved away from the base level.
    pub delta: bool,
}

impl From<&RandomizationDraw> for RandomizationView {
    fn from(r: &RandomizationDraw) -> Self {
        RandomizationView { base_level: r.base + 1, delta: r.delta }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationView {
    pub level: usize,
    pub label: String,
    pub stage: SessionStage,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_weights: Option<Vec<f64>>,
    /// Zero-based index into the configured model class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_model: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_mass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization: Option<RandomizationView>,
}

impl RecommendationView {
    pub fn from_core(rec: &Recommendation, labels: &[String]) -> Self {
        RecommendationView {
            level: rec.dose + 1,
            label: labels[rec.dose].clone(),
            stage: rec.stage.into(),
            rationale: rec.rationale.clone(),
            estimates: rec.estimates.clone(),
            parameter: rec.parameter,
            interval: rec.interval.as_ref().map(IntervalView::from),
            model_weights: rec.model_weights.clone(),
            selected_model: rec.selected_model,
            interval_mass: rec.interval_mass.clone(),
            success: rec.success.clone(),
            randomization: rec.randomization.as_ref().map(RandomizationView::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    /// One-based inclusion order.
    pub patient: usize,
    pub level: usize,
    pub toxicity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub overridden: bool,
}

impl PatientView {
    pub fn from_record(patient: usize, r: &PatientRecord, overridden: bool) -> Self {
        PatientView {
            patient,
            level: r.dose + 1,
            toxicity: r.toxicity,
            grade: r.grade,
            response: r.response,
            group: r.group,
            overridden,
        }
    }

    pub fn to_record(&self) -> PatientRecord {
        PatientRecord {
            dose: self.level - 1,
            toxicity: self.toxicity,
            group: self.group,
            grade: self.grade,
            response: self.response,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub stage: SessionStage,
    pub created_at: DateTime<Utc>,
    pub target: f64,
    pub labels: Vec<String>,
    pub patients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_patients: Option<usize>,
    pub history: Vec<PatientView>,
    pub recommendation: RecommendationView,
    pub config: DesignConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeResponse {
    pub patient: usize,
    pub stage: SessionStage,
    pub recommendation: RecommendationView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseEstimate {
    pub level: usize,
    pub label: String,
    pub skeleton: f64,
    pub treated: usize,
    pub toxicities: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<f64>,
    /// Posterior mass of the parameter interval that recommends this level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatesView {
    pub stage: SessionStage,
    pub target: f64,
    pub patients: usize,
    pub recommended_level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_model: Option<usize>,
    pub doses: Vec<DoseEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    /// Patients in the hypothetical history.
    pub patients: usize,
    pub stage: SessionStage,
    pub history: Vec<PatientView>,
    pub recommendation: RecommendationView,
    pub estimates: EstimatesView,
}

/// One dose's share of the parameter range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionInterval {
    pub level: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Parameter range split by the dose each value would recommend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionView {
    pub target: f64,
    pub intervals: Vec<PartitionInterval>,
    /// Current parameter estimate and the interval holding it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_level: Option<usize>,
}

impl PartitionView {
    pub fn from_core(p: &crm_core::partition::Partition, parameter: Option<f64>) -> Self {
        PartitionView {
            target: p.target,
            intervals: (0..p.levels())
                .map(|i| {
                    let (lower, upper) = p.interval(i);
                    PartitionInterval { level: i + 1, lower, upper }
                })
                .collect(),
            parameter,
            parameter_level: parameter.and_then(|a| p.interval_index(a)).map(|i| i + 1),
        }
    }
}

/// Audit log entry. `seq` starts at 1 and has no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        id: Uuid,
        config: DesignConfig,
    },
    OutcomeEntered {
        outcome: PatientView,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next_group: Option<u8>,
    },
    OverrideRecorded {
        patient: usize,
        recommended_level: usize,
        given_level: usize,
    },
    RecommendationIssued {
        /// Patients included when the recommendation was made.
        patients: usize,
        recommendation: RecommendationView,
    },
    SessionClosed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub stage: SessionStage,
    pub patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Error body returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    /// Stable machine-readable code such as `session_closed`.
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_flag_uses_the_reserved_word() {
        let v = serde_json::to_value(OutcomeInput::new(2, false).overridden()).unwrap();
        assert_eq!(v["override"], true);
        let plain = serde_json::to_value(OutcomeInput::new(2, false)).unwrap();
        assert!(plain.get("override").is_none());
        let back: OutcomeInput = serde_json::from_value(v).unwrap();
        assert!(back.override_level);
    }

    #[test]
    fn levels_are_one_based() {
        assert_eq!(OutcomeInput::new(0, true).to_record(), None);
        assert_eq!(OutcomeInput::new(3, true).to_record().unwrap().dose, 2);
        let rec = PatientRecord::new(0, false);
        let view = PatientView::from_record(1, &rec, false);
        assert_eq!(view.level, 1);
        assert_eq!(view.to_record(), rec);
    }

    #[test]
    fn events_are_tagged() {
        let e = Event::SessionClosed { reason: "done".into() };
        let entry = AuditEntry { seq: 4, at: DateTime::from_timestamp(0, 0).unwrap(), event: e.clone() };
        let v = serde_json::to_value(&entry).unwrap();
        assert_eq!(v["type"], "session_closed");
        assert_eq!(v["seq"], 4);
        let back: AuditEntry = serde_json::from_value(v).unwrap();
        assert_eq!(back.event, e);
    }
}
