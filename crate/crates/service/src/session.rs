//! Trial session state machine.
//!
//! A session is the fold of its audit log: every mutation appends entries
//! and [`Session::replay`] rebuilds the same state from them, re-running
//! inference and checking each logged recommendation against the
//! recomputed one.

use chrono::{DateTime, Utc};
use crm_api::{
    AuditEntry, DoseEstimate, EstimatesView, Event, HypotheticalOutcome, OutcomeInput, OutcomeResponse,
    PartitionView, PatientView, RecommendationView, SessionStage, SessionSummary, SessionView, WhatIfRequest,
    WhatIfResponse,
};
use crm_core::designs::Inference;
use crm_core::partition::compute_partition;
use crm_core::{
    next_dose, ConfigError, CrmError, DesignConfig, PatientRecord, Recommendation, TrialHistory, WorkingModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("level {given} given but level {recommended} is recommended; set override to accept it")]
    LevelMismatch { recommended: usize, given: usize },
    #[error("{field}: {message}")]
    InvalidOutcome { field: String, message: String },
    #[error("invalid design: {0}")]
    InvalidConfig(ConfigError),
    #[error(transparent)]
    Inference(#[from] CrmError),
    #[error("audit log does not replay: {0}")]
    Replay(String),
}

fn bad_outcome(field: &str, message: impl Into<String>) -> SessionError {
    SessionError::InvalidOutcome { field: field.into(), message: message.into() }
}

/// Randomized designs draw from a stream fixed by the seed and the number
/// of patients already included, so a what-if query sees the same draw the
/// real outcome will.
pub fn allocation_rng(seed: u64, patients: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(patients as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct Session {
    id: Uuid,
    config: DesignConfig,
    model: WorkingModel,
    created_at: DateTime<Utc>,
    history: TrialHistory,
    overridden: Vec<bool>,
    next_group: Option<u8>,
    recommendation: Recommendation,
    closed: bool,
    log: Vec<AuditEntry>,
}

impl Session {
    pub fn create(id: Uuid, config: DesignConfig, now: DateTime<Utc>) -> Result<Self, SessionError> {
        config.validate().map_err(SessionError::InvalidConfig)?;
        let model = config.working_model().map_err(SessionError::InvalidConfig)?;
        let next_group = config.design.grouping.map(|_| 0);
        let history = TrialHistory::new();
        let recommendation = recommend(&config, &model, &history, next_group)?;
        let mut s = Session {
            id,
            config: config.clone(),
            model,
            created_at: now,
            history,
            overridden: Vec::new(),
            next_group,
            recommendation,
            closed: false,
            log: Vec::new(),
        };
        s.append(now, Event::SessionCreated { id, config });
        s.issue(now);
        Ok(s)
    }

    /// Rebuilds a session from its audit log.
    pub fn replay(entries: Vec<AuditEntry>) -> Result<Self, SessionError> {
        let mut it = entries.into_iter();
        let Some(first) = it.next() else {
            return Err(SessionError::Replay("empty log".into()));
        };
        let Event::SessionCreated { id, config } = first.event.clone() else {
            return Err(SessionError::Replay("log does not start with session_created".into()));
        };
        let mut s = Session::create(id, config, first.at)?;
        s.log.truncate(1);
        s.log[0] = first;
        for entry in it {
            if entry.seq != s.log.len() as u64 + 1 {
                return Err(SessionError::Replay(format!(
                    "entry {} follows entry {}",
                    entry.seq,
                    s.log.len()
                )));
            }
            match &entry.event {
                Event::SessionCreated { .. } => {
                    return Err(SessionError::Replay(format!("second session_created at {}", entry.seq)));
                }
                Event::OutcomeEntered { outcome, next_group } => {
                    if s.closed {
                        return Err(SessionError::Replay(format!("outcome after close at {}", entry.seq)));
                    }
                    if outcome.patient != s.history.len() + 1 || outcome.level == 0 {
                        return Err(SessionError::Replay(format!("bad outcome at {}", entry.seq)));
                    }
                    let rec = recommend_after(&s, outcome.to_record(), *next_group)?;
                    s.history.push(outcome.to_record());
                    s.overridden.push(outcome.overridden);
                    s.next_group = *next_group;
                    s.recommendation = rec;
                }
                Event::OverrideRecorded { patient, .. } => {
                    if s.overridden.get(patient.wrapping_sub(1)) != Some(&true) {
                        return Err(SessionError::Replay(format!("stray override at {}", entry.seq)));
                    }
                }
                Event::RecommendationIssued { patients, recommendation } => {
                    let current = s.recommendation_view();
                    if *patients != s.history.len() || *recommendation != current {
                        return Err(SessionError::Replay(format!(
                            "recommendation at {} differs from the recomputed one",
                            entry.seq
                        )));
                    }
                }
                Event::SessionClosed { .. } => s.closed = true,
            }
            s.log.push(entry);
        }
        Ok(s)
    }

    pub fn id(&self) -> Uuid {
        self.id
    }

    pub fn config(&self) -> &DesignConfig {
        &self.config
    }

    pub fn history(&self) -> &TrialHistory {
        &self.history
    }

    pub fn log(&self) -> &[AuditEntry] {
        &self.log
    }

    pub fn recommendation(&self) -> &Recommendation {
        &self.recommendation
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn stage(&self) -> SessionStage {
        if self.closed {
            SessionStage::Closed
        } else {
            self.recommendation.stage.into()
        }
    }

    /// Records one outcome and issues the next recommendation. Returns the
    /// number of audit entries appended.
    pub fn record(&mut self, input: &OutcomeInput, now: DateTime<Utc>) -> Result<usize, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        let record = self.check_outcome(input)?;
        let recommended = self.recommended_for(record.group)?;
        let overridden = record.dose != recommended;
        if overridden && !input.override_level {
            return Err(SessionError::LevelMismatch { recommended: recommended + 1, given: input.level });
        }
        let next_group = self.resolve_next_group(input.next_group)?;
        let rec = recommend_after(self, record.clone(), next_group)?;

        let before = self.log.len();
        let patient = self.history.len() + 1;
        self.history.push(record.clone());
        self.overridden.push(overridden);
        self.next_group = next_group;
        self.recommendation = rec;
        self.append(
            now,
            Event::OutcomeEntered {
                outcome: PatientView::from_record(patient, &record, overridden),
                next_group,
            },
        );
        if overridden {
            self.append(
                now,
                Event::OverrideRecorded {
                    patient,
                    recommended_level: recommended + 1,
                    given_level: input.level,
                },
            );
        }
        self.issue(now);
        if self.config.max_patients == Some(self.history.len()) {
            self.closed = true;
            self.append(now, Event::SessionClosed { reason: format!("{patient} patients included") });
        }
        Ok(self.log.len() - before)
    }

    pub fn close(&mut self, reason: Option<String>, now: DateTime<Utc>) -> Result<usize, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        self.closed = true;
        self.append(
            now,
            Event::SessionClosed { reason: reason.unwrap_or_else(|| "closed by request".into()) },
        );
        Ok(1)
    }

    /// The recommendation a sequence of outcomes would lead to. Nothing is
    /// recorded.
    pub fn what_if(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        if req.outcomes.is_empty() {
            return Err(bad_outcome("outcomes", "at least one outcome is needed"));
        }
        let mut scratch = self.clone();
        let last = req.outcomes.len() - 1;
        for (i, h) in req.outcomes.iter().enumerate() {
            let group = h.group.or(scratch.next_group);
            let level = match h.level {
                Some(l) => l,
                None => scratch.recommended_for(group)? + 1,
            };
            let input = hypothetical_input(h, level, group);
            let record = scratch.check_outcome(&input).map_err(|e| at_outcome(e, i))?;
            let next_group = if i == last { req.next_group } else { req.outcomes[i + 1].group };
            let next_group = scratch.resolve_next_group(next_group.or(scratch.next_group))?;
            let rec = recommend_after(&scratch, record.clone(), next_group)?;
            let recommended = scratch.recommended_for(record.group)?;
            scratch.history.push(record);
            scratch.overridden.push(recommended + 1 != level);
            scratch.next_group = next_group;
            scratch.recommendation = rec;
        }
        Ok(WhatIfResponse {
            patients: scratch.history.len(),
            stage: scratch.recommendation.stage.into(),
            history: scratch.history_view(),
            recommendation: scratch.recommendation_view(),
            estimates: scratch.estimates(),
        })
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id,
            name: self.config.name.clone(),
            stage: self.stage(),
            patients: self.history.len(),
        }
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id,
            name: self.config.name.clone(),
            stage: self.stage(),
            created_at: self.created_at,
            target: self.config.design.target,
            labels: self.labels().to_vec(),
            patients: self.history.len(),
            max_patients: self.config.max_patients,
            history: self.history_view(),
            recommendation: self.recommendation_view(),
            config: self.config.clone(),
        }
    }

    pub fn outcome_response(&self) -> OutcomeResponse {
        OutcomeResponse {
            patient: self.history.len(),
            stage: self.stage(),
            recommendation: self.recommendation_view(),
        }
    }

    pub fn recommendation_view(&self) -> RecommendationView {
        RecommendationView::from_core(&self.recommendation, self.labels())
    }

    /// Recommendation for a patient of `group` in a two-group design, when
    /// it differs from the group the standing recommendation was made for.
    pub fn recommendation_for_group(&self, group: u8) -> Result<RecommendationView, SessionError> {
        if self.config.design.grouping.is_none() {
            return Err(bad_outcome("group", "the design has no groups"));
        }
        if group > 1 {
            return Err(bad_outcome("group", format!("group {group} is not 0 or 1")));
        }
        if Some(group) == self.next_group {
            return Ok(self.recommendation_view());
        }
        let rec = recommend(&self.config, &self.model, &self.history, Some(group))?;
        Ok(RecommendationView::from_core(&rec, self.labels()))
    }

    pub fn estimates(&self) -> EstimatesView {
        let rec = &self.recommendation;
        let k = self.model.levels();
        let mut treated = vec![0; k];
        let mut toxicities = vec![0; k];
        for r in self.history.records() {
            treated[r.dose] += 1;
            toxicities[r.dose] += r.toxicity as usize;
        }
        let pick = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map(|v| v[i]);
        let doses = (0..k)
            .map(|i| DoseEstimate {
                level: i + 1,
                label: self.labels()[i].clone(),
                skeleton: self.model.alpha()[i],
                treated: treated[i],
                toxicities: toxicities[i],
                estimate: pick(&rec.estimates, i),
                success: pick(&rec.success, i),
                interval_mass: pick(&rec.interval_mass, i),
            })
            .collect();
        let view = self.recommendation_view();
        EstimatesView {
            stage: self.stage(),
            target: self.config.design.target,
            patients: self.history.len(),
            recommended_level: view.level,
            parameter: view.parameter,
            interval: view.interval,
            model_weights: view.model_weights,
            selected_model: view.selected_model,
            doses,
        }
    }

    /// Partition of the model's parameter range at the design target.
    pub fn partition(&self) -> Result<PartitionView, SessionError> {
        let p = compute_partition(&self.model, self.config.design.target, self.model.bounds())?;
        let parameter = self.recommendation.parameter.filter(|_| self.model.is_one_parameter());
        Ok(PartitionView::from_core(&p, parameter))
    }

    fn labels(&self) -> &[String] {
        self.model.skeleton().labels()
    }

    fn history_view(&self) -> Vec<PatientView> {
        self.history
            .records()
            .iter()
            .zip(&self.overridden)
            .enumerate()
            .map(|(i, (r, &o))| PatientView::from_record(i + 1, r, o))
            .collect()
    }

    fn append(&mut self, at: DateTime<Utc>, event: Event) {
        let seq = self.log.len() as u64 + 1;
        self.log.push(AuditEntry { seq, at, event });
    }

    fn issue(&mut self, now: DateTime<Utc>) {
        let recommendation = self.recommendation_view();
        self.append(now, Event::RecommendationIssued { patients: self.history.len(), recommendation });
    }

    /// Zero-based recommended dose for the next patient of `group`.
    fn recommended_for(&self, group: Option<u8>) -> Result<usize, SessionError> {
        if self.config.design.grouping.is_none() || group == self.next_group {
            return Ok(self.recommendation.dose);
        }
        Ok(recommend(&self.config, &self.model, &self.history, group)?.dose)
    }

    fn resolve_next_group(&self, requested: Option<u8>) -> Result<Option<u8>, SessionError> {
        match (self.config.design.grouping, requested) {
            (None, None) => Ok(None),
            (None, Some(_)) => Err(bad_outcome("next_group", "the design has no groups")),
            (Some(_), Some(g)) if g > 1 => Err(bad_outcome("next_group", format!("group {g} is not 0 or 1"))),
            (Some(_), g) => Ok(Some(g.unwrap_or(0))),
        }
    }

    fn check_outcome(&self, input: &OutcomeInput) -> Result<PatientRecord, SessionError> {
        let k = self.model.levels();
        let record = input
            .to_record()
            .filter(|r| r.dose < k)
            .ok_or_else(|| bad_outcome("level", format!("level {} is not in 1..={k}", input.level)))?;
        if let Some(g) = record.grade {
            if g > 4 {
                return Err(bad_outcome("grade", format!("grade {g} is not in 0..=4")));
            }
            if (g == 4) != record.toxicity {
                return Err(bad_outcome(
                    "grade",
                    format!("grade {g} disagrees with toxicity = {}", record.toxicity),
                ));
            }
        }
        let design = &self.config.design;
        match (design.grouping, record.group) {
            (Some(_), None) => {
                return Err(bad_outcome("group", "two-group designs need the patient's group"))
            }
            (Some(_), Some(g)) if g > 1 => {
                return Err(bad_outcome("group", format!("group {g} is not 0 or 1")))
            }
            (None, Some(_)) => return Err(bad_outcome("group", "the design has no groups")),
            _ => {}
        }
        if design.msd.is_some() && !record.toxicity && record.response.is_none() {
            return Err(bad_outcome("response", "needed for every patient without toxicity"));
        }
        if let Inference::LikelihoodTwoStage { escalation } = &design.inference {
            if escalation.grades_required && record.grade.is_none() {
                return Err(bad_outcome("grade", "the escalation rule needs a grade"));
            }
        }
        record.validate(k).map_err(|e| bad_outcome("outcome", e.to_string()))?;
        Ok(record)
    }
}

fn hypothetical_input(h: &HypotheticalOutcome, level: usize, group: Option<u8>) -> OutcomeInput {
    OutcomeInput {
        level,
        toxicity: h.toxicity,
        grade: h.grade,
        response: h.response,
        group,
        override_level: true,
        next_group: None,
    }
}

fn at_outcome(e: SessionError, index: usize) -> SessionError {
    match e {
        SessionError::InvalidOutcome { field, message } => {
            SessionError::InvalidOutcome { field: format!("outcomes[{index}].{field}"), message }
        }
        other => other,
    }
}

fn recommend_after(
    s: &Session,
    record: PatientRecord,
    next_group: Option<u8>,
) -> Result<Recommendation, SessionError> {
    let mut history = s.history.clone();
    history.push(record);
    recommend(&s.config, &s.model, &history, next_group)
}

fn recommend(
    config: &DesignConfig,
    model: &WorkingModel,
    history: &TrialHistory,
    next_group: Option<u8>,
) -> Result<Recommendation, SessionError> {
    let mut rng = allocation_rng(config.seed, history.len());
    Ok(next_dose(&config.design, model, history, next_group, &mut rng)?)
}
