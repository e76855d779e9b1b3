//! Approximate confidence interval for the toxicity probability at the
//! recommended dose, from the normal approximation to the MLE.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::likelihood::nontoxic_information;
use crate::model::{ModelKind, WorkingModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub dose: usize,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    /// Estimated variance `v(a_hat)` of the parameter estimate.
    pub variance: f64,
}

/// `(psi(x, a + z sqrt(v)), psi(x, a - z sqrt(v)))` where `1/v` sums
/// `psi (log alpha)^2 / (1 - psi)^2` over the non-toxic records (for the
/// power-exp kind, the analogous non-toxic observed information).
pub fn confidence_interval(
    model: &WorkingModel,
    history: &TrialHistory,
    a_hat: f64,
    next_dose: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    model.check_params(&a_hat.into())?;
    history.validate(model.levels())?;
    let tally = Tally::toxicity(history, model.levels());
    if tally.total() == tally.total_events() {
        return Err(CrmError::DegenerateVariance("no non-toxic records".into()));
    }
    let inv = nontoxic_information(model, &tally, a_hat);
    if !(inv > 0.0 && inv.is_finite()) {
        return Err(CrmError::DegenerateVariance(format!("1/v = {inv}")));
    }
    interval_from_variance(model, a_hat, inv.recip(), next_dose, level)
}

/// Interval endpoints for a given parameter variance. A zero variance
/// collapses the interval onto the point estimate.
pub fn interval_from_variance(
    model: &WorkingModel,
    a_hat: f64,
    variance: f64,
    dose: usize,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CrmError::InvalidDesign(format!("confidence level {level} is not in (0, 1)")));
    }
    if !(variance >= 0.0) {
        return Err(CrmError::DegenerateVariance(format!("v = {variance}")));
    }
    model.check_dose(dose)?;
    if !model.is_one_parameter() {
        return Err(CrmError::Unsupported("interval needs a one-parameter model".into()));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
    let half = z * variance.sqrt();
    let mut lo_param = a_hat - half;
    let hi_param = a_hat + half;
    if model.kind() == ModelKind::PowerDirect {
        lo_param = lo_param.max(model.bounds().0);
    }
    // psi decreases in a: the larger parameter gives the lower bound
    Ok(ConfidenceInterval {
        dose,
        level,
        lower: model.psi_at(dose, hi_param),
        upper: model.psi_at(dose, lo_param),
        variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHA: [f64; 6] = [0.04, 0.07, 0.20, 0.35, 0.55, 0.70];

    #[test]
    fn zero_variance_collapses() {
        let m = WorkingModel::power_direct(ALPHA.to_vec()).unwrap();
        let ci = interval_from_variance(&m, 0.7, 0.0, 1, 0.9).unwrap();
        assert_eq!(ci.lower, ci.upper);
        assert_eq!(ci.lower, m.psi(1, 0.7).unwrap());
    }

    #[test]
    fn all_toxic_history_is_degenerate() {
        let m = WorkingModel::power_direct(ALPHA.to_vec()).unwrap();
        let h = TrialHistory::from_pairs(&[(0, true), (1, true)]);
        assert!(matches!(confidence_interval(&m, &h, 0.7, 1, 0.9), Err(CrmError::DegenerateVariance(_))));
    }
}
