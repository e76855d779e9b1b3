//! Grade-driven initial escalation for two-stage designs.
//!
//! Stage one walks up the dose grid on the severity grades of non-dose-limiting
//! toxicities and stops at the first dose-limiting toxicity, once the cohort in
//! which it occurred is complete. The data collected so far then seed the
//! likelihood stage.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::history::{PatientRecord, TrialHistory, MAX_GRADE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationRule {
    /// Patients per cohort. Stage one never ends inside a cohort.
    #[serde(default = "default_cohort_size")]
    pub cohort_size: usize,
    /// Escalation needs the mean severity at the current level below this.
    #[serde(default = "default_threshold")]
    pub severity_threshold: f64,
    /// Severity assigned to grades 0 through 4.
    #[serde(default = "default_grade_table")]
    pub grade_table: [f64; 5],
    /// Reject records without a grade instead of imputing 0 or 4 from the
    /// toxicity indicator.
    #[serde(default)]
    pub grades_required: bool,
}

fn default_cohort_size() -> usize {
    1
}

fn default_threshold() -> f64 {
    2.0
}

fn default_grade_table() -> [f64; 5] {
    [0.0, 1.0, 2.0, 3.0, 4.0]
}

impl Default for EscalationRule {
    fn default() -> Self {
        EscalationRule {
            cohort_size: default_cohort_size(),
            severity_threshold: default_threshold(),
            grade_table: default_grade_table(),
            grades_required: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageDecision {
    Escalate,
    Stay,
    HandOff,
}

impl EscalationRule {
    pub fn with_cohort_size(mut self, n: usize) -> Self {
        self.cohort_size = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort_size == 0 {
            return Err(CrmError::InvalidDesign("cohort_size must be at least 1".into()));
        }
        if !(self.severity_threshold.is_finite() && self.severity_threshold > 0.0) {
            return Err(CrmError::InvalidDesign(format!(
                "severity_threshold {} must be positive",
                self.severity_threshold
            )));
        }
        if self.grade_table.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CrmError::InvalidDesign(
                "grade_table severities must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn severity(&self, r: &PatientRecord) -> Result<f64> {
        let grade = match r.grade {
            Some(g) => g,
            None if self.grades_required => {
                return Err(CrmError::InvalidHistory(
                    "the escalation rule needs a grade for every patient".into(),
                ))
            }
            None if r.toxicity => MAX_GRADE,
            None => 0,
        };
        Ok(self.grade_table[grade as usize])
    }

    /// Number of records after which stage one ended: the first completed
    /// cohort that contains or follows the first dose-limiting toxicity.
    /// `None` while stage one is still running.
    pub fn hand_off_point(&self, history: &TrialHistory) -> Option<usize> {
        let records = history.records();
        let first_dlt = records.iter().position(|r| r.toxicity)?;
        let levels = records.iter().map(|r| r.dose).max().unwrap_or(0) + 1;
        let mut counts = vec![0usize; levels];
        for (i, r) in records.iter().enumerate() {
            counts[r.dose] += 1;
            if i >= first_dlt && counts[r.dose] % self.cohort_size == 0 {
                return Some(i + 1);
            }
        }
        None
    }

    pub fn stage_one_over(&self, history: &TrialHistory) -> bool {
        self.hand_off_point(history).is_some()
    }
}

/// Stage-one decision after the latest patient. `levels` bounds escalation:
/// at the top dose an escalation becomes a stay.
pub fn two_stage_step(rule: &EscalationRule, history: &TrialHistory, levels: usize) -> Result<StageDecision> {
    rule.validate()?;
    history.validate(levels)?;
    let Some(last) = history.last() else {
        return Err(CrmError::InvalidHistory("stage one needs at least one patient to decide".into()));
    };
    if rule.stage_one_over(history) {
        return Ok(StageDecision::HandOff);
    }
    let current = last.dose;
    let at_level: Vec<&PatientRecord> = history.records().iter().filter(|r| r.dose == current).collect();
    let n = at_level.len();
    if n % rule.cohort_size != 0 || history.has_dlt() {
        // cohort not yet complete
        return Ok(StageDecision::Stay);
    }
    let severities = at_level.iter().map(|r| rule.severity(r)).collect::<Result<Vec<_>>>()?;
    let escalate = if n >= 3 {
        true
    } else {
        let mean = severities.iter().sum::<f64>() / n as f64;
        let latest = *severities.last().expect("n >= 1");
        mean < rule.severity_threshold && !(n > rule.cohort_size && latest != 0.0)
    };
    if escalate && current + 1 < levels {
        Ok(StageDecision::Escalate)
    } else {
        Ok(StageDecision::Stay)
    }
}

/// Mean severity at `dose`, or `None` when nobody has been treated there.
pub fn mean_severity(rule: &EscalationRule, history: &TrialHistory, dose: usize) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut n = 0usize;
    for r in history.records().iter().filter(|r| r.dose == dose) {
        total += rule.severity(r)?;
        n += 1;
    }
    Ok((n > 0).then(|| total / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graded(doses_grades: &[(usize, u8)]) -> TrialHistory {
        doses_grades.iter().map(|&(d, g)| PatientRecord::new(d, g == 4).with_grade(g)).collect()
    }

    #[test]
    fn low_grades_escalate() {
        let rule = EscalationRule::default();
        for g in [0, 1] {
            let h = graded(&[(0, g)]);
            assert_eq!(two_stage_step(&rule, &h, 6).unwrap(), StageDecision::Escalate);
        }
    }

    #[test]
    fn grade_two_holds_then_reassesses() {
        let rule = EscalationRule::default();
        assert_eq!(two_stage_step(&rule, &graded(&[(0, 2)]), 6).unwrap(), StageDecision::Stay);
        assert_eq!(two_stage_step(&rule, &graded(&[(0, 2), (0, 0)]), 6).unwrap(), StageDecision::Escalate);
        assert_eq!(two_stage_step(&rule, &graded(&[(0, 2), (0, 1)]), 6).unwrap(), StageDecision::Stay);
        assert_eq!(
            two_stage_step(&rule, &graded(&[(0, 2), (0, 1), (0, 3)]), 6).unwrap(),
            StageDecision::Escalate
        );
    }

    #[test]
    fn dlt_hands_off_after_cohort() {
        let rule = EscalationRule::default().with_cohort_size(3);
        let mut h = graded(&[(0, 0), (0, 0), (0, 0), (1, 4)]);
        assert_eq!(two_stage_step(&rule, &h, 6).unwrap(), StageDecision::Stay);
        h.push(PatientRecord::new(1, false));
        assert_eq!(two_stage_step(&rule, &h, 6).unwrap(), StageDecision::Stay);
        h.push(PatientRecord::new(1, false));
        assert_eq!(two_stage_step(&rule, &h, 6).unwrap(), StageDecision::HandOff);
        assert_eq!(rule.hand_off_point(&h), Some(6));
    }

    #[test]
    fn top_dose_stays() {
        let rule = EscalationRule::default();
        let h = graded(&[(0, 0), (1, 0)]);
        assert_eq!(two_stage_step(&rule, &h, 2).unwrap(), StageDecision::Stay);
    }

    #[test]
    fn missing_grades_when_required() {
        let rule = EscalationRule { grades_required: true, ..EscalationRule::default() };
        let h = TrialHistory::from_pairs(&[(0, false)]);
        assert!(two_stage_step(&rule, &h, 3).is_err());
    }
}
