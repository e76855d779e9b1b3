//! Trial data: the accumulated `(dose, outcome)` pairs of treated patients.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::model::ClassMember;

/// Highest grade on the severity scale; grade 4 is a dose-limiting toxicity.
pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    /// Zero-based dose index.
    pub dose: usize,
    pub toxicity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<bool>,
}

impl PatientRecord {
    pub fn new(dose: usize, toxicity: bool) -> Self {
        PatientRecord { dose, toxicity, group: None, grade: None, response: None }
    }

    pub fn with_grade(mut self, grade: u8) -> Self {
        self.grade = Some(grade);
        self
    }

    pub fn with_group(mut self, group: u8) -> Self {
        self.group = Some(group);
        self
    }

    pub fn with_response(mut self, response: bool) -> Self {
        self.response = Some(response);
        self
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.dose >= levels {
            return Err(CrmError::DoseOutOfRange { index: self.dose, levels });
        }
        if let Some(g) = self.grade {
            if g > MAX_GRADE {
                return Err(CrmError::InvalidHistory(format!("grade {g} outside 0..={MAX_GRADE}")));
            }
            if (g == MAX_GRADE) != self.toxicity {
                return Err(CrmError::InvalidHistory(format!(
                    "grade {g} disagrees with toxicity = {}",
                    self.toxicity
                )));
            }
        }
        if let Some(z) = self.group {
            if z > 1 {
                return Err(CrmError::InvalidHistory(format!("group {z} is not 0 or 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialHistory {
    records: Vec<PatientRecord>,
}

impl TrialHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<PatientRecord>) -> Self {
        TrialHistory { records }
    }

    /// Convenience constructor from `(dose, toxicity)` pairs.
    pub fn from_pairs(pairs: &[(usize, bool)]) -> Self {
        pairs.iter().map(|&(d, y)| PatientRecord::new(d, y)).collect()
    }

    pub fn push(&mut self, record: PatientRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        self.records.iter().try_for_each(|r| r.validate(levels))
    }

    pub fn toxicities(&self) -> usize {
        self.records.iter().filter(|r| r.toxicity).count()
    }

    /// At least one toxic and one non-toxic response.
    pub fn is_heterogeneous(&self) -> bool {
        let t = self.toxicities();
        t > 0 && t < self.records.len()
    }

    pub fn has_dlt(&self) -> bool {
        self.records.iter().any(|r| r.toxicity)
    }

    pub fn highest_dose_tried(&self) -> Option<usize> {
        self.records.iter().map(|r| r.dose).max()
    }

    pub fn last(&self) -> Option<&PatientRecord> {
        self.records.last()
    }
}

impl FromIterator<PatientRecord> for TrialHistory {
    fn from_iter<I: IntoIterator<Item = PatientRecord>>(iter: I) -> Self {
        TrialHistory { records: iter.into_iter().collect() }
    }
}

impl Extend<PatientRecord> for TrialHistory {
    fn extend<I: IntoIterator<Item = PatientRecord>>(&mut self, iter: I) {
        self.records.extend(iter)
    }
}

/// Sufficient statistics of a binary-response history: per skeleton index,
/// the number of patients and the number of events. Counts are real so
/// that weighted pseudo-data fit the same machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub trials: Vec<f64>,
    pub events: Vec<f64>,
}

impl Tally {
    pub fn zeros(levels: usize) -> Self {
        Tally { trials: vec![0.0; levels], events: vec![0.0; levels] }
    }

    /// Toxicity counts by dose.
    pub fn toxicity(history: &TrialHistory, levels: usize) -> Self {
        let mut t = Tally::zeros(levels);
        for r in history.records() {
            t.add(r.dose, r.toxicity, 1.0);
        }
        t
    }

    /// Toxicity counts by the effective dose of a class member, which folds
    /// the group shift into the index.
    pub fn toxicity_for_member(history: &TrialHistory, member: &ClassMember) -> Self {
        let mut t = Tally::zeros(member.model.levels());
        for r in history.records() {
            t.add(member.effective_dose(r.dose, r.group), r.toxicity, 1.0);
        }
        t
    }

    /// Response counts among non-toxic patients that carry a response.
    pub fn response(history: &TrialHistory, levels: usize) -> Self {
        let mut t = Tally::zeros(levels);
        for r in history.records() {
            if let (false, Some(v)) = (r.toxicity, r.response) {
                t.add(r.dose, v, 1.0);
            }
        }
        t
    }

    pub fn add(&mut self, dose: usize, event: bool, weight: f64) {
        self.trials[dose] += weight;
        if event {
            self.events[dose] += weight;
        }
    }

    pub fn total(&self) -> f64 {
        self.trials.iter().sum()
    }

    pub fn total_events(&self) -> f64 {
        self.events.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0.0
    }

    pub fn is_heterogeneous(&self) -> bool {
        let e = self.total_events();
        e > 0.0 && e < self.total()
    }

    /// Number of distinct indices that carry data.
    pub fn support(&self) -> usize {
        self.trials.iter().filter(|&&n| n > 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heterogeneity() {
        let h = TrialHistory::from_pairs(&[(0, false), (0, false)]);
        assert!(!h.is_heterogeneous());
        let h = TrialHistory::from_pairs(&[(0, false), (1, true)]);
        assert!(h.is_heterogeneous());
        assert_eq!(h.highest_dose_tried(), Some(1));
    }

    #[test]
    fn grade_must_agree_with_toxicity() {
        assert!(PatientRecord::new(0, false).with_grade(4).validate(3).is_err());
        assert!(PatientRecord::new(0, true).with_grade(4).validate(3).is_ok());
        assert!(PatientRecord::new(0, false).with_grade(5).validate(3).is_err());
        assert!(PatientRecord::new(3, false).validate(3).is_err());
    }

    #[test]
    fn response_tally_skips_toxic_patients() {
        let h: TrialHistory = vec![
            PatientRecord::new(0, false).with_response(true),
            PatientRecord::new(0, true).with_response(true),
            PatientRecord::new(1, false).with_response(false),
        ]
        .into_iter()
        .collect();
        let t = Tally::response(&h, 2);
        assert_eq!(t.trials, vec![1.0, 1.0]);
        assert_eq!(t.events, vec![1.0, 0.0]);
    }
}
