#![allow(dead_code)]
//! Brute-force reference computations written without the library's
//! kernels.

use crm_core::{ModelKind, PatientRecord, TrialHistory};

pub const ALPHA: [f64; 6] = [0.04, 0.07, 0.20, 0.35, 0.55, 0.70];
pub const TRUTH: [f64; 6] = [0.03, 0.22, 0.45, 0.60, 0.80, 0.95];

pub fn psi(kind: ModelKind, alpha: f64, a: f64) -> f64 {
    match kind {
        ModelKind::PowerExp => alpha.powf(a.exp()),
        ModelKind::PowerDirect => alpha.powf(a),
        ModelKind::Logistic2p => unreachable!(),
    }
}

pub fn loglik(kind: ModelKind, alpha: &[f64], h: &[(usize, bool)], a: f64) -> f64 {
    h.iter()
        .map(|&(d, y)| {
            let p = psi(kind, alpha[d], a);
            if y {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

pub fn pairs(h: &TrialHistory) -> Vec<(usize, bool)> {
    h.records().iter().map(|r| (r.dose, r.toxicity)).collect()
}

pub struct Riemann {
    pub mean: f64,
    pub estimates: Vec<f64>,
    /// ln of the integral of prior times likelihood.
    pub log_z: f64,
}

/// Midpoint rule with `n` cells on `[lo, hi]`.
pub fn riemann_posterior(
    kind: ModelKind,
    alpha: &[f64],
    h: &[(usize, bool)],
    log_prior: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Riemann {
    let step = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..n)
        .map(|i| {
            let a = lo + (i as f64 + 0.5) * step;
            log_prior(a) + loglik(kind, alpha, h, a)
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut first = 0.0;
    let mut est = vec![0.0; alpha.len()];
    for (i, &l) in logs.iter().enumerate() {
        let a = lo + (i as f64 + 0.5) * step;
        let w = (l - m).exp();
        z += w;
        first += a * w;
        for (e, &al) in est.iter_mut().zip(alpha) {
            *e += psi(kind, al, a) * w;
        }
    }
    Riemann { mean: first / z, estimates: est.iter().map(|e| e / z).collect(), log_z: m + (z * step).ln() }
}

pub fn normal_log_pdf(mean: f64, var: f64) -> impl Fn(f64) -> f64 {
    move |a| -0.5 * (a - mean).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// The first nine patients of the worked two-stage example, plus `extra`
/// outcomes at the second level.
pub fn illustration(extra: &[bool]) -> TrialHistory {
    let mut h = TrialHistory::from_pairs(&[
        (0, false),
        (0, false),
        (0, false),
        (1, false),
        (1, false),
        (1, false),
        (2, true),
        (2, true),
        (2, false),
    ]);
    h.extend(extra.iter().map(|&y| PatientRecord::new(1, y)));
    h
}

/// Bisection on a function with a sign change, independent of the
/// library's root finders.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dose closest to `theta` under `psi(., a)`, decided on the log scale so
/// that probabilities too small for a double still order correctly. Since
/// the curve increases in dose, the answer is the highest dose at or below
/// target or the one above it; ties go to the lower dose.
pub fn closest_exact(kind: ModelKind, alpha: &[f64], a: f64, theta: f64) -> usize {
    let log_psi = |al: f64| match kind {
        ModelKind::PowerExp => a.exp() * al.ln(),
        ModelKind::PowerDirect => a * al.ln(),
        ModelKind::Logistic2p => unreachable!(),
    };
    let lt = theta.ln();
    let below = alpha.iter().take_while(|&&al| log_psi(al) <= lt).count();
    match below {
        0 => 0,
        j if j == alpha.len() => j - 1,
        j => {
            let lower = theta - log_psi(alpha[j - 1]).exp();
            let upper = log_psi(alpha[j]).exp() - theta;
            if upper < lower {
                j
            } else {
                j - 1
            }
        }
    }
}
