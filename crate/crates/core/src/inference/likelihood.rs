//! Binomial log-likelihood of a working model and its maximization.

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::model::{logistic, ModelKind, Params, WorkingModel};
use crate::rootfind::newton_bracketed;

/// Convergence target for the score at the maximum.
pub const SCORE_TOL: f64 = 1e-10;

/// Log-likelihood up to terms free of the parameter. An empty history
/// yields 0 (the log of an empty product).
pub fn log_likelihood(
    model: &WorkingModel,
    history: &TrialHistory,
    params: impl Into<Params>,
) -> Result<f64> {
    let params = params.into();
    model.check_params(&params)?;
    history.validate(model.levels())?;
    let tally = Tally::toxicity(history, model.levels());
    Ok(match params {
        Params::One(a) => tally_log_likelihood(model, &tally, a),
        Params::Two(a, b) => logistic_log_likelihood(model, &tally, a, b),
    })
}

/// `log(1 - psi)` from `log psi`, accurate for `psi` near 0 and 1.
#[inline]
pub(crate) fn log1m_from_log(log_p: f64) -> f64 {
    (-log_p.exp_m1()).ln()
}

/// `psi / (1 - psi)` from `log psi`.
#[inline]
fn odds_from_log(log_p: f64) -> f64 {
    1.0 / (-log_p).exp_m1()
}

pub(crate) fn tally_log_likelihood(model: &WorkingModel, tally: &Tally, a: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..tally.trials.len() {
        let n = tally.trials[i];
        if n == 0.0 {
            continue;
        }
        let t = tally.events[i];
        let lp = model.log_psi(i, a);
        if t > 0.0 {
            ll += t * lp;
        }
        if n - t > 0.0 {
            ll += (n - t) * log1m_from_log(lp);
        }
    }
    ll
}

/// Score `dL/da` and observed information `-d2L/da2`.
pub(crate) fn tally_score_info(model: &WorkingModel, tally: &Tally, a: f64) -> (f64, f64) {
    let mut score = 0.0;
    let mut info = 0.0;
    for i in 0..tally.trials.len() {
        let n = tally.trials[i];
        if n == 0.0 {
            continue;
        }
        let t = tally.events[i];
        let lp = model.log_psi(i, a);
        let d1 = model.dlog_psi(i, a);
        let d2 = model.d2log_psi(i, a);
        score += t * d1;
        info -= t * d2;
        if n - t > 0.0 {
            let r = odds_from_log(lp);
            let p = lp.exp();
            score -= (n - t) * d1 * r;
            info += (n - t) * (d2 * r + d1 * d1 * r / (1.0 - p));
        }
    }
    (score, info)
}

pub(crate) fn tally_score(model: &WorkingModel, tally: &Tally, a: f64) -> f64 {
    tally_score_info(model, tally, a).0
}

/// Observed information restricted to the non-toxic terms. For the
/// power-direct model the toxic terms contribute nothing, so this is the
/// full observed information.
pub(crate) fn nontoxic_information(model: &WorkingModel, tally: &Tally, a: f64) -> f64 {
    let mut info = 0.0;
    for i in 0..tally.trials.len() {
        let m = tally.trials[i] - tally.events[i];
        if m <= 0.0 {
            continue;
        }
        let lp = model.log_psi(i, a);
        let d1 = model.dlog_psi(i, a);
        let d2 = model.d2log_psi(i, a);
        let r = odds_from_log(lp);
        info += m * (d2 * r + d1 * d1 * r / (1.0 - lp.exp()));
    }
    info
}

pub(crate) fn logistic_log_likelihood(model: &WorkingModel, tally: &Tally, a: f64, b: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..tally.trials.len() {
        let n = tally.trials[i];
        if n == 0.0 {
            continue;
        }
        let t = tally.events[i];
        let eta = a * model.alpha()[i] + b;
        // log p = -log(1 + e^-eta), log(1-p) = -log(1 + e^eta)
        ll -= t * softplus(-eta) + (n - t) * softplus(eta);
    }
    ll
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Maximum likelihood estimate of the model parameters.
pub fn mle(model: &WorkingModel, history: &TrialHistory) -> Result<Params> {
    history.validate(model.levels())?;
    let tally = Tally::toxicity(history, model.levels());
    match model.kind() {
        ModelKind::Logistic2p => {
            let (a, b) = mle_logistic(model, &tally)?;
            Ok(Params::Two(a, b))
        }
        _ => mle_tally(model, &tally).map(Params::One),
    }
}

/// One-parameter MLE from sufficient statistics. Requires at least one
/// event and one non-event; otherwise the likelihood is monotone and has no
/// interior maximum.
pub fn mle_tally(model: &WorkingModel, tally: &Tally) -> Result<f64> {
    if !model.is_one_parameter() {
        return Err(CrmError::Unsupported("scalar MLE needs a one-parameter model".into()));
    }
    if !tally.is_heterogeneous() {
        return Err(CrmError::NoInteriorMaximum(format!(
            "{} events in {} observations; need at least one of each outcome",
            tally.total_events(),
            tally.total()
        )));
    }
    let (lo, hi) = model.bounds();
    let s_lo = tally_score(model, tally, lo);
    let s_hi = tally_score(model, tally, hi);
    // The score is decreasing in a for both power models.
    if !(s_lo > 0.0 && s_hi < 0.0) {
        return Err(CrmError::MleOutsideBounds { lower: lo, upper: hi });
    }
    newton_bracketed(
        |a| {
            let (s, info) = tally_score_info(model, tally, a);
            (s, -info)
        },
        lo,
        hi,
        SCORE_TOL,
    )
}

/// Two-parameter logistic MLE by Newton's method with step halving.
pub fn mle_logistic(model: &WorkingModel, tally: &Tally) -> Result<(f64, f64)> {
    if model.kind() != ModelKind::Logistic2p {
        return Err(CrmError::Unsupported("logistic MLE on a power model".into()));
    }
    if !tally.is_heterogeneous() {
        return Err(CrmError::NoInteriorMaximum("homogeneous responses".into()));
    }
    if tally.support() < 2 {
        return Err(CrmError::NoInteriorMaximum("two parameters need data at two or more doses".into()));
    }
    let alpha = model.alpha();
    let (mut a, mut b) = (1.0, 0.0);
    let mut ll = logistic_log_likelihood(model, tally, a, b);
    for _ in 0..200 {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for i in 0..alpha.len() {
            let n = tally.trials[i];
            if n == 0.0 {
                continue;
            }
            let p = logistic(a * alpha[i] + b);
            let r = tally.events[i] - n * p;
            let w = n * p * (1.0 - p);
            ga += r * alpha[i];
            gb += r;
            haa += w * alpha[i] * alpha[i];
            hab += w * alpha[i];
            hbb += w;
        }
        if ga.abs().max(gb.abs()) < SCORE_TOL {
            if a <= 0.0 {
                return Err(CrmError::ParameterOutOfDomain {
                    value: a,
                    reason: "fitted logistic slope is not positive".into(),
                });
            }
            return Ok((a, b));
        }
        let det = haa * hbb - hab * hab;
        if !(det > 0.0) || !det.is_finite() {
            return Err(CrmError::NoInteriorMaximum("singular information matrix".into()));
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        let mut t = 1.0;
        loop {
            let (na, nb) = (a + t * da, b + t * db);
            let nll = logistic_log_likelihood(model, tally, na, nb);
            if nll >= ll - 1e-12 * ll.abs() {
                a = na;
                b = nb;
                ll = nll;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(CrmError::NoInteriorMaximum("line search stalled".into()));
            }
        }
        if a.abs() > 1e8 || b.abs() > 1e8 {
            return Err(CrmError::NoInteriorMaximum("estimates diverge (separation)".into()));
        }
    }
    Err(CrmError::NoInteriorMaximum("Newton iterations exhausted".into()))
}
