//! Posterior summaries by deterministic quadrature.
//!
//! All integrals are taken against `exp{log f(a) - M}` where `M` is the
//! maximum of the unnormalized log posterior, so nothing underflows no
//! matter how much data has accrued. The normalizer is reported on the log
//! scale.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::likelihood::{mle_tally, tally_log_likelihood, tally_score_info};
use crate::inference::prior::{BoundPrior, PriorSpec};
use crate::model::{ModelKind, WorkingModel};
use crate::quadrature::AdaptiveQuadrature;
use crate::rootfind::golden_max;

const GRID_POINTS: usize = 513;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Posterior mean of the parameter.
    pub mean: f64,
    /// Posterior mode (the MLE when no prior is used).
    pub mode: f64,
    /// Posterior standard deviation of the parameter; the inverse root
    /// observed information for likelihood-only summaries.
    pub sd: f64,
    /// Posterior mean of `psi(d_i, a)` for every dose.
    pub estimates: Vec<f64>,
    /// `psi(d_i, mean)` for every dose.
    pub plug_in: Vec<f64>,
    /// `ln A_j`; absent for likelihood-only summaries.
    pub log_normalizer: Option<f64>,
    /// Posterior probability of each partition interval, when the prior is
    /// a partition prior.
    pub interval_mass: Option<Vec<f64>>,
}

/// Posterior of a one-parameter working model. With [`PriorSpec::None`] this
/// is the maximum-likelihood plug-in summary and needs heterogeneous data.
pub fn posterior(
    model: &WorkingModel,
    history: &TrialHistory,
    prior: &PriorSpec,
) -> Result<PosteriorSummary> {
    history.validate(model.levels())?;
    let tally = Tally::toxicity(history, model.levels());
    let bound = BoundPrior::bind(prior, model)?;
    posterior_tally(model, &tally, &bound)
}

pub(crate) fn posterior_tally(
    model: &WorkingModel,
    tally: &Tally,
    prior: &BoundPrior,
) -> Result<PosteriorSummary> {
    if !model.is_one_parameter() {
        return Err(CrmError::Unsupported("posterior quadrature is one-dimensional".into()));
    }
    if let BoundPrior::Flat = prior {
        return likelihood_summary(model, tally);
    }
    let domain = Domain::for_model(model, prior);
    let log_post = |a: f64| prior.combine(model, a, tally_log_likelihood(model, tally, a));

    let (mode, peak) = find_mode(&domain, &log_post)?;
    let scale = curvature_scale(&log_post, mode, &domain);

    let mut breaks_a: Vec<f64> =
        [1.0, 2.5, 6.0, 15.0, 40.0].iter().flat_map(|&m| [mode - m * scale, mode + m * scale]).collect();
    breaks_a.push(mode);
    let partition = prior.partition();
    if let Some(p) = partition {
        breaks_a.extend_from_slice(&p.kappas);
    }
    let breaks = domain.breakpoints(&breaks_a);

    let k = model.levels();
    let masses = partition.map(|p| p.levels()).unwrap_or(0);
    let dim = 3 + k + masses;
    let integrand = |u: f64, out: &mut [f64]| {
        let (a, jac) = domain.to_param(u);
        let lp = log_post(a);
        let w = if lp == f64::NEG_INFINITY { 0.0 } else { (lp - peak).exp() * jac };
        if w == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        out[0] = w;
        out[1] = a * w;
        out[2] = a * a * w;
        for i in 0..k {
            out[3 + i] = model.psi_at(i, a) * w;
        }
        if let Some(p) = partition {
            let owner = p.interval_index(a);
            for i in 0..masses {
                out[3 + k + i] = if owner == Some(i) { w } else { 0.0 };
            }
        }
    };
    let q = AdaptiveQuadrature::default().integrate(integrand, &breaks, dim)?;
    let z = q[0];
    if !(z > 0.0) {
        return Err(CrmError::NonFiniteIntegrand(mode));
    }
    let mean = q[1] / z;
    let var = (q[2] / z - mean * mean).max(0.0);
    let estimates = q[3..3 + k].iter().map(|v| v / z).collect();
    let interval_mass = partition.map(|_| q[3 + k..].iter().map(|v| v / z).collect());
    Ok(PosteriorSummary {
        mean,
        mode,
        sd: var.sqrt(),
        estimates,
        plug_in: model.curve(mean),
        log_normalizer: Some(peak + z.ln()),
        interval_mass,
    })
}

fn likelihood_summary(model: &WorkingModel, tally: &Tally) -> Result<PosteriorSummary> {
    let a = mle_tally(model, tally)?;
    let (_, info) = tally_score_info(model, tally, a);
    let curve = model.curve(a);
    Ok(PosteriorSummary {
        mean: a,
        mode: a,
        sd: if info > 0.0 { info.sqrt().recip() } else { f64::INFINITY },
        estimates: curve.clone(),
        plug_in: curve,
        log_normalizer: None,
        interval_mass: None,
    })
}

/// Integration domain in the parameter, with the coordinate used for
/// quadrature. A half line `(lo, inf)` is mapped to `(0, 1)` by
/// `a = lo + u / (1 - u)`.
#[derive(Debug, Clone, Copy)]
enum Domain {
    Finite(f64, f64),
    HalfLine(f64),
}

impl Domain {
    fn for_model(model: &WorkingModel, prior: &BoundPrior) -> Self {
        let (lo, hi) = model.bounds();
        let (s_lo, s_hi) = prior.support();
        match (model.kind(), s_hi) {
            (ModelKind::PowerDirect, None) => Domain::HalfLine(s_lo.unwrap_or(0.0).max(0.0)),
            _ => {
                let lo = s_lo.map_or(lo, |s| s.max(lo));
                let hi = s_hi.map_or(hi, |s| s.min(hi));
                Domain::Finite(lo, hi)
            }
        }
    }

    fn coord_range(&self) -> (f64, f64) {
        match *self {
            Domain::Finite(lo, hi) => (lo, hi),
            Domain::HalfLine(_) => (0.0, 1.0),
        }
    }

    /// `(a, da/du)`.
    #[inline]
    fn to_param(&self, u: f64) -> (f64, f64) {
        match *self {
            Domain::Finite(..) => (u, 1.0),
            Domain::HalfLine(lo) => {
                let r = 1.0 - u;
                (lo + u / r, 1.0 / (r * r))
            }
        }
    }

    fn to_coord(&self, a: f64) -> f64 {
        match *self {
            Domain::Finite(..) => a,
            Domain::HalfLine(lo) => {
                let x = a - lo;
                x / (1.0 + x)
            }
        }
    }

    fn contains(&self, a: f64) -> bool {
        match *self {
            Domain::Finite(lo, hi) => a > lo && a < hi,
            Domain::HalfLine(lo) => a > lo && a.is_finite(),
        }
    }

    fn breakpoints(&self, points: &[f64]) -> Vec<f64> {
        let (u0, u1) = self.coord_range();
        let mut b: Vec<f64> = points
            .iter()
            .filter(|&&a| self.contains(a))
            .map(|&a| self.to_coord(a))
            .filter(|&u| u > u0 && u < u1)
            .collect();
        b.push(u0);
        b.push(u1);
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

fn find_mode<F: Fn(f64) -> f64>(domain: &Domain, log_post: &F) -> Result<(f64, f64)> {
    let (u0, u1) = domain.coord_range();
    let h = (u1 - u0) / GRID_POINTS as f64;
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for j in 0..GRID_POINTS {
        let u = u0 + (j as f64 + 0.5) * h;
        let (a, _) = domain.to_param(u);
        let v = log_post(a);
        if v.is_nan() {
            return Err(CrmError::NonFiniteIntegrand(a));
        }
        if v > best.1 {
            best = (j, v);
        }
    }
    if best.0 == usize::MAX {
        return Err(CrmError::InvalidPrior("posterior density vanishes on the whole domain".into()));
    }
    let j = best.0 as f64;
    let lo = domain.to_param((u0 + (j - 0.5) * h).max(u0)).0;
    let hi = domain.to_param((u0 + (j + 1.5) * h).min(u1 - h * 1e-9)).0;
    let xtol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    let mode = golden_max(|a| log_post(a), lo, hi, xtol);
    let v = log_post(mode);
    // A discontinuous prior can leave the refined point below the grid best.
    if v >= best.1 {
        Ok((mode, v))
    } else {
        let a = domain.to_param(u0 + (j + 0.5) * h).0;
        Ok((a, best.1))
    }
}

fn curvature_scale<F: Fn(f64) -> f64>(log_post: &F, mode: f64, domain: &Domain) -> f64 {
    let h = 1e-4 * mode.abs().max(1e-2);
    let (f0, fp, fm) = (log_post(mode), log_post(mode + h), log_post(mode - h));
    let c = -(fp - 2.0 * f0 + fm) / (h * h);
    if c.is_finite() && c > 0.0 {
        c.sqrt().recip()
    } else {
        match *domain {
            Domain::Finite(lo, hi) => (hi - lo) / 100.0,
            Domain::HalfLine(_) => mode.abs().max(1.0) / 10.0,
        }
    }
}
