//! Posterior weights over a class of working models.

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::posterior::{posterior_tally, PosteriorSummary};
use crate::inference::prior::{BoundPrior, PriorSpec};
use crate::model::ModelClass;

/// Posterior model weights with the per-member posterior summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFit {
    pub weights: Vec<f64>,
    pub members: Vec<PosteriorSummary>,
}

impl ClassFit {
    /// Member with the largest weight; ties go to the earlier member.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// `pi(m | data)` proportional to `pi(m) * integral exp{L_m(u)} g(u) du`.
pub fn model_class_posterior(
    class: &ModelClass,
    history: &TrialHistory,
    prior: &PriorSpec,
) -> Result<Vec<f64>> {
    if history.is_empty() {
        check_proper(prior)?;
        return Ok(class.prior_weights().to_vec());
    }
    Ok(model_class_fit(class, history, prior)?.weights)
}

pub fn model_class_fit(class: &ModelClass, history: &TrialHistory, prior: &PriorSpec) -> Result<ClassFit> {
    check_proper(prior)?;
    let levels = class.members()[0].model.levels();
    history.validate(levels)?;
    let shifted = class.members().iter().any(|m| m.group_shift > 0);
    if shifted && history.records().iter().any(|r| r.group.is_none()) {
        return Err(CrmError::InvalidHistory(
            "group labels are required when the class models a group shift".into(),
        ));
    }
    let mut members = Vec::with_capacity(class.len());
    let mut log_marginals = Vec::with_capacity(class.len());
    for member in class.members() {
        let tally = Tally::toxicity_for_member(history, member);
        let bound = BoundPrior::bind(prior, &member.model)?;
        let summary = posterior_tally(&member.model, &tally, &bound)?;
        log_marginals.push(summary.log_normalizer.expect("proper prior"));
        members.push(summary);
    }
    let weights = normalize_log_weights(class.prior_weights(), &log_marginals);
    Ok(ClassFit { weights, members })
}

/// `pi(m) exp(l_m) / sum`, shifted by the largest log term first.
pub(crate) fn normalize_log_weights(prior: &[f64], log_marginals: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = prior
        .iter()
        .zip(log_marginals)
        .map(|(&p, &l)| if p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / total).collect()
}

fn check_proper(prior: &PriorSpec) -> Result<()> {
    match prior {
        PriorSpec::Gamma { .. } | PriorSpec::Normal { .. } | PriorSpec::Partition { .. } => Ok(()),
        _ => Err(CrmError::InvalidPrior(
            "model-class weights need a proper prior density (gamma, normal or partition)".into(),
        )),
    }
}
