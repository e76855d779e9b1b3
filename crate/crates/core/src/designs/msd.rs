//! Most successful dose: success is a response without toxicity, with
//! probability `P(d) = Q(d) {1 - R(d)}`.
//!
//! Toxicity follows the working model `psi(d, a)`; response given no
//! toxicity follows `phi(d, b) = beta_i ^ exp(b)`. The joint likelihood
//! factorizes, so `a` and `b` are fitted separately.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::likelihood::mle_tally;
use crate::inference::posterior::posterior_tally;
use crate::inference::prior::{BoundPrior, PriorSpec};
use crate::model::{ModelKind, Skeleton, WorkingModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsdSpec {
    /// Response skeleton `0 < beta_1 < ... < beta_k < 1`.
    pub beta: Vec<f64>,
}

impl MsdSpec {
    pub fn new(beta: Vec<f64>) -> Self {
        MsdSpec { beta }
    }

    pub fn efficacy_model(&self) -> Result<WorkingModel> {
        let skeleton = Skeleton::new(self.beta.clone())
            .map_err(|e| CrmError::InvalidDesign(format!("msd beta: {e}")))?;
        Ok(WorkingModel::new(ModelKind::PowerExp, skeleton))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdFit {
    pub dose: usize,
    pub a: f64,
    pub b: f64,
    /// `psi(d_i, a)`.
    pub toxicity: Vec<f64>,
    /// `phi(d_i, b)`.
    pub response: Vec<f64>,
    /// `phi(d_i, b) {1 - psi(d_i, a)}`.
    pub success: Vec<f64>,
}

/// Fits both models by maximum likelihood and recommends the dose with the
/// largest estimated success probability; ties go to the lower dose.
pub fn msd_next_dose(spec: &MsdSpec, tox_model: &WorkingModel, history: &TrialHistory) -> Result<MsdFit> {
    msd_fit(spec, tox_model, history, &PriorSpec::None)
}

/// As [`msd_next_dose`], but with a proper prior each parameter is the
/// posterior mode under that prior, so homogeneous data are allowed.
pub fn msd_fit(
    spec: &MsdSpec,
    tox_model: &WorkingModel,
    history: &TrialHistory,
    prior: &PriorSpec,
) -> Result<MsdFit> {
    if !tox_model.is_one_parameter() {
        return Err(CrmError::Unsupported("msd needs a one-parameter toxicity model".into()));
    }
    let eff = spec.efficacy_model()?;
    let k = tox_model.levels();
    if eff.levels() != k {
        return Err(CrmError::InvalidDesign(format!(
            "msd beta has {} levels, the toxicity skeleton {k}",
            eff.levels()
        )));
    }
    history.validate(k)?;
    if history.records().iter().any(|r| !r.toxicity && r.response.is_none()) {
        return Err(CrmError::InvalidHistory("every non-toxic patient needs a response outcome".into()));
    }
    let tox = Tally::toxicity(history, k);
    let resp = Tally::response(history, k);
    if resp.is_empty() && *prior == PriorSpec::None {
        return Err(CrmError::InvalidHistory("no non-toxic patients to fit the response model".into()));
    }
    let a = fit(tox_model, &tox, prior)?;
    let b = fit(&eff, &resp, prior)?;
    let toxicity = tox_model.curve(a);
    let response = eff.curve(b);
    let (dose, success) = most_successful(&toxicity, &response);
    Ok(MsdFit { dose, a, b, toxicity, response, success })
}

/// `P_i = Q_i (1 - R_i)` and its first argmax.
pub fn most_successful(toxicity: &[f64], response: &[f64]) -> (usize, Vec<f64>) {
    let success: Vec<f64> = toxicity.iter().zip(response).map(|(r, q)| q * (1.0 - r)).collect();
    let mut dose = 0;
    for i in 1..success.len() {
        if success[i] > success[dose] {
            dose = i;
        }
    }
    (dose, success)
}

fn fit(model: &WorkingModel, tally: &Tally, prior: &PriorSpec) -> Result<f64> {
    match prior {
        PriorSpec::None => mle_tally(model, tally),
        PriorSpec::Gamma { .. } | PriorSpec::Normal { .. } => {
            let bound = BoundPrior::bind(prior, model)?;
            Ok(posterior_tally(model, tally, &bound)?.mode)
        }
        _ => Err(CrmError::Unsupported("msd fits take a gamma or normal prior".into())),
    }
}
