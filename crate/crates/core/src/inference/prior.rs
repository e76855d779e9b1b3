//! Prior specifications for the scalar model parameter.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::likelihood::tally_log_likelihood;
use crate::model::WorkingModel;
use crate::partition::{compute_partition, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    /// `lambda^c a^(c-1) exp(-lambda a) / Gamma(c)` on `a > 0`.
    Gamma {
        lambda: f64,
        shape: f64,
    },
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Weighted fictional observations. The posterior is
    /// `exp{w log g(a) + (1 - w) L(a)}` with `log g` the pseudo-data
    /// log-likelihood.
    PseudoData {
        records: TrialHistory,
        weight: f64,
    },
    /// Mass `p_i` spread uniformly over the parameter interval on which dose
    /// `i` is closest to `target`.
    Partition {
        mass: Vec<f64>,
        target: f64,
    },
    /// Likelihood only.
    None,
}

impl PriorSpec {
    pub fn validate(&self, levels: usize) -> Result<()> {
        let bad = |m: String| Err(CrmError::InvalidPrior(m));
        match self {
            PriorSpec::Gamma { lambda, shape } => {
                if !(*lambda > 0.0 && *shape > 0.0) {
                    return bad(format!("gamma needs lambda > 0 and shape > 0, got {lambda}, {shape}"));
                }
            }
            PriorSpec::Normal { mean, variance } => {
                if !(mean.is_finite() && *variance > 0.0 && variance.is_finite()) {
                    return bad(format!("normal needs finite mean and variance > 0, got {variance}"));
                }
            }
            PriorSpec::PseudoData { records, weight } => {
                // w = 1 is the prior-only limit and is accepted.
                if !(*weight > 0.0 && *weight <= 1.0) {
                    return bad(format!("pseudo-data weight {weight} is not in (0, 1]"));
                }
                records.validate(levels)?;
                if records.is_empty() {
                    return bad("pseudo-data prior has no records".into());
                }
            }
            PriorSpec::Partition { mass, target } => {
                if mass.len() != levels {
                    return bad(format!("{} masses for {levels} levels", mass.len()));
                }
                if mass.iter().any(|&p| !(p >= 0.0)) {
                    return bad("partition masses must be non-negative".into());
                }
                let total: f64 = mass.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("partition masses sum to {total}, not 1"));
                }
                if !(*target > 0.0 && *target < 1.0) {
                    return bad(format!("partition target {target} is not in (0, 1)"));
                }
            }
            PriorSpec::None => {}
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PriorSpec::None)
    }

    /// Uniform partition prior, `1/k` per dose.
    pub fn uniform_partition(levels: usize, target: f64) -> Self {
        PriorSpec::Partition { mass: vec![1.0 / levels as f64; levels], target }
    }
}

/// A prior bound to a working model, ready for evaluation.
#[derive(Debug, Clone)]
pub(crate) enum BoundPrior {
    Gamma { lambda: f64, shape: f64, log_norm: f64 },
    Normal { mean: f64, variance: f64 },
    Pseudo { tally: Tally, weight: f64 },
    Partition { partition: Partition, log_density: Vec<f64> },
    Flat,
}

impl BoundPrior {
    pub(crate) fn bind(spec: &PriorSpec, model: &WorkingModel) -> Result<Self> {
        spec.validate(model.levels())?;
        Ok(match spec {
            PriorSpec::Gamma { lambda, shape } => BoundPrior::Gamma {
                lambda: *lambda,
                shape: *shape,
                log_norm: shape * lambda.ln() - ln_gamma(*shape),
            },
            PriorSpec::Normal { mean, variance } => BoundPrior::Normal { mean: *mean, variance: *variance },
            PriorSpec::PseudoData { records, weight } => {
                BoundPrior::Pseudo { tally: Tally::toxicity(records, model.levels()), weight: *weight }
            }
            PriorSpec::Partition { mass, target } => {
                let partition = compute_partition(model, *target, model.bounds())?;
                let log_density = mass
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let (lo, hi) = partition.interval(i);
                        (p / (hi - lo)).ln()
                    })
                    .collect();
                BoundPrior::Partition { partition, log_density }
            }
            PriorSpec::None => BoundPrior::Flat,
        })
    }

    /// Support of the prior intersected with nothing; `None` is unbounded.
    pub(crate) fn support(&self) -> (Option<f64>, Option<f64>) {
        match self {
            BoundPrior::Gamma { .. } => (Some(0.0), None),
            BoundPrior::Partition { partition, .. } => {
                let (lo, hi) = partition.bounds();
                (Some(lo), Some(hi))
            }
            _ => (None, None),
        }
    }

    pub(crate) fn partition(&self) -> Option<&Partition> {
        match self {
            BoundPrior::Partition { partition, .. } => Some(partition),
            _ => None,
        }
    }

    /// Log prior density (normalized for the parametric kinds, the
    /// unnormalized pseudo-data log-likelihood for pseudo-data).
    pub(crate) fn log_density(&self, model: &WorkingModel, a: f64) -> f64 {
        match self {
            BoundPrior::Gamma { lambda, shape, log_norm } => {
                if a <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    log_norm + (shape - 1.0) * a.ln() - lambda * a
                }
            }
            BoundPrior::Normal { mean, variance } => {
                let z = a - mean;
                -0.5 * z * z / variance - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
            }
            BoundPrior::Pseudo { tally, .. } => tally_log_likelihood(model, tally, a),
            BoundPrior::Partition { partition, log_density } => match partition.interval_index(a) {
                Some(i) => log_density[i],
                None => f64::NEG_INFINITY,
            },
            BoundPrior::Flat => 0.0,
        }
    }

    /// Unnormalized log posterior given the data log-likelihood `ll`.
    pub(crate) fn combine(&self, model: &WorkingModel, a: f64, ll: f64) -> f64 {
        match self {
            BoundPrior::Pseudo { weight, .. } => {
                let lg = self.log_density(model, a);
                if *weight >= 1.0 {
                    lg
                } else {
                    weight * lg + (1.0 - weight) * ll
                }
            }
            _ => self.log_density(model, a) + ll,
        }
    }
}
