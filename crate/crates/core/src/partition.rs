//! Partition of the parameter interval `[A, B]` into the sets on which each
//! dose is the one closest to target, and the consistency diagnostics built
//! on it.
//!
//! For the power models `psi(d_i, a)` decreases in `a`, so as `a` grows the
//! recommended dose moves up the grid: dose `i` owns `[kappa_i, kappa_{i+1})`
//! (zero-based), with `kappa_0 = A`, `kappa_k = B` and `B` assigned to the
//! top dose. Each interior `kappa` solves
//! `psi(d_{i-1}, kappa) + psi(d_i, kappa) = 2 theta`.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::history::{Tally, TrialHistory};
use crate::inference::likelihood::tally_score;
use crate::model::{ModelKind, WorkingModel};
use crate::rootfind::bisect;

const KAPPA_XTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub target: f64,
    /// `kappa_0 = A < kappa_1 < ... < kappa_k = B`.
    pub kappas: Vec<f64>,
}

impl Partition {
    pub fn levels(&self) -> usize {
        self.kappas.len() - 1
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.kappas[0], self.kappas[self.levels()])
    }

    /// `[lower, upper)` owned by `dose`.
    pub fn interval(&self, dose: usize) -> (f64, f64) {
        (self.kappas[dose], self.kappas[dose + 1])
    }

    /// Dose whose interval contains `a`, or `None` outside `[A, B]`.
    pub fn interval_index(&self, a: f64) -> Option<usize> {
        let (lo, hi) = self.bounds();
        if !(a >= lo && a <= hi) {
            return None;
        }
        if a == hi {
            return Some(self.levels() - 1);
        }
        // first kappa strictly greater than a, minus one
        let upper = self.kappas.partition_point(|&k| k <= a);
        Some(upper - 1)
    }

    /// Tab-separated table: `dose  lower  upper`, one-based dose column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dose\tlower\tupper\n");
        for i in 0..self.levels() {
            let (lo, hi) = self.interval(i);
            out.push_str(&format!("{}\t{lo:.12}\t{hi:.12}\n", i + 1));
        }
        out
    }
}

pub fn compute_partition(model: &WorkingModel, target: f64, bounds: (f64, f64)) -> Result<Partition> {
    if !model.is_one_parameter() {
        return Err(CrmError::Unsupported("partition needs a one-parameter model".into()));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(CrmError::InvalidDesign(format!("target {target} is not in (0, 1)")));
    }
    let (lo, hi) = bounds;
    if !(lo < hi) || (model.kind() == ModelKind::PowerDirect && lo <= 0.0) {
        return Err(CrmError::ParameterOutOfDomain {
            value: lo,
            reason: format!("bounds [{lo}, {hi}] not admissible for {:?}", model.kind()),
        });
    }
    for i in 0..model.levels() {
        let at_lower = model.psi_at(i, lo);
        let at_upper = model.psi_at(i, hi);
        if !(at_upper < target && target < at_lower) {
            return Err(CrmError::PartitionInfeasible { dose: i, target, at_lower, at_upper });
        }
    }
    let mut kappas = Vec::with_capacity(model.levels() + 1);
    kappas.push(lo);
    for i in 1..model.levels() {
        let k = bisect(|a| model.psi_at(i - 1, a) + model.psi_at(i, a) - 2.0 * target, lo, hi, KAPPA_XTOL)?;
        kappas.push(k);
    }
    kappas.push(hi);
    debug_assert!(kappas.windows(2).all(|w| w[0] < w[1]));
    Ok(Partition { target, kappas })
}

/// Parameter value at which `psi(dose, a) = p`, in closed form.
pub fn solve_parameter(model: &WorkingModel, dose: usize, p: f64) -> Result<f64> {
    model.check_dose(dose)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(CrmError::InvalidScenario(format!("probability {p} at dose {dose} is not in (0, 1)")));
    }
    let ratio = p.ln() / model.alpha()[dose].ln();
    match model.kind() {
        ModelKind::PowerDirect => Ok(ratio),
        ModelKind::PowerExp => Ok(ratio.ln()),
        ModelKind::Logistic2p => {
            Err(CrmError::Unsupported("per-dose constants need a one-parameter model".into()))
        }
    }
}

/// Dose closest to `target` among `probs`; ties go to the lower dose and
/// are reported.
pub fn closest_to_target(probs: &[f64], target: f64) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for i in 1..probs.len() {
        let d = (probs[i] - target).abs();
        let b = (probs[best] - target).abs();
        if d < b {
            best = i;
            tie = false;
        } else if d == b {
            tie = true;
        }
    }
    (best, tie)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `a_i` solving `psi(d_i, a_i) = R(d_i)`.
    pub a_constants: Vec<f64>,
    /// Zero-based index of the true MTD.
    pub mtd: usize,
    pub a0: f64,
    pub theta0: f64,
    /// Open interval on which the MTD is strictly the closest dose.
    pub s_set: (f64, f64),
    pub members_in_set: Vec<bool>,
    /// The MTD was chosen by breaking a tie.
    pub mtd_tie: bool,
}

impl ConsistencyReport {
    pub fn all_in_set(&self) -> bool {
        self.members_in_set.iter().all(|&b| b)
    }
}

/// Checks the sufficient condition for convergence: every per-dose constant
/// `a_i` lies in the set of parameters that recommend the true MTD.
pub fn check_consistency(model: &WorkingModel, truth: &[f64], target: f64) -> Result<ConsistencyReport> {
    if truth.len() != model.levels() {
        return Err(CrmError::InvalidScenario(format!(
            "{} true probabilities for {} levels",
            truth.len(),
            model.levels()
        )));
    }
    if truth.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CrmError::InvalidScenario(
            "true toxicity probabilities must be strictly increasing".into(),
        ));
    }
    let a_constants =
        truth.iter().enumerate().map(|(i, &r)| solve_parameter(model, i, r)).collect::<Result<Vec<_>>>()?;
    let (mtd, mtd_tie) = closest_to_target(truth, target);
    let partition = compute_partition(model, target, model.bounds())?;
    // Because |psi(d_i, a) - theta| is unimodal in i, the strict-closeness
    // set of the MTD is the open interior of its partition interval.
    let s_set = partition.interval(mtd);
    let members_in_set = a_constants.iter().map(|&a| a > s_set.0 && a < s_set.1).collect();
    Ok(ConsistencyReport {
        a0: a_constants[mtd],
        theta0: truth[mtd],
        a_constants,
        mtd,
        s_set,
        members_in_set,
        mtd_tie,
    })
}

/// Per-observation estimating term
/// `s(t, x, a) = t psi'/psi + (1 - t)(-psi')/(1 - psi)` at dose `x`.
pub fn estimating_term(model: &WorkingModel, t: f64, dose: usize, a: f64) -> f64 {
    let mut tally = Tally::zeros(model.levels());
    tally.trials[dose] = 1.0;
    tally.events[dose] = t;
    tally_score(model, &tally, a)
}

/// `I_n(a)`: the score of the log-likelihood divided by `n`.
pub fn estimating_function(model: &WorkingModel, history: &TrialHistory, a: f64) -> Result<f64> {
    model.check_params(&a.into())?;
    history.validate(model.levels())?;
    if history.is_empty() {
        return Ok(0.0);
    }
    let tally = Tally::toxicity(history, model.levels());
    Ok(tally_score(model, &tally, a) / history.len() as f64)
}

/// `I~_n(a) = sum_i pi_n(d_i) s{R(d_i), d_i, a}` with allocation
/// frequencies `pi_n` and true probabilities `R`.
pub fn expected_estimating_function(model: &WorkingModel, truth: &[f64], allocation: &[f64], a: f64) -> f64 {
    truth
        .iter()
        .zip(allocation)
        .enumerate()
        .filter(|(_, (_, &p))| p > 0.0)
        .map(|(i, (&r, &p))| p * estimating_term(model, r, i, a))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHA: [f64; 6] = [0.04, 0.07, 0.20, 0.35, 0.55, 0.70];
    const TRUTH: [f64; 6] = [0.03, 0.22, 0.45, 0.60, 0.80, 0.95];

    #[test]
    fn first_kappa_for_power_direct() {
        let m = WorkingModel::power_direct(ALPHA.to_vec()).unwrap();
        let p = compute_partition(&m, 0.2, m.bounds()).unwrap();
        // independent check: plain bisection on 0.04^a + 0.07^a = 0.4
        let (mut lo, mut hi) = (0.1f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.04f64.powf(mid) + 0.07f64.powf(mid) > 0.4 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert!((p.kappas[1] - lo).abs() < 1e-9);
        assert!((p.kappas[1] - 0.552).abs() < 1e-3);
        assert!(p.kappas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn symmetric_crossing() {
        // psi(d1, 1) = 0.1 and psi(d2, 1) = 0.3 straddle theta = 0.2 evenly
        let m = WorkingModel::power_direct(vec![0.1, 0.3]).unwrap();
        let p = compute_partition(&m, 0.2, m.bounds()).unwrap();
        assert!((p.kappas[1] - 1.0).abs() < 1e-10);
        assert_eq!(p.levels(), 2);
        assert_eq!(p.interval_index(p.bounds().1), Some(1));
        assert_eq!(p.interval_index(p.bounds().0), Some(0));
        assert_eq!(p.interval_index(0.5), Some(0));
        assert_eq!(p.interval_index(1.5), Some(1));
        assert_eq!(p.interval_index(-1.0), None);
    }

    #[test]
    fn infeasible_bounds_name_the_dose() {
        let m = WorkingModel::power_exp(ALPHA.to_vec()).unwrap();
        let e = compute_partition(&m, 0.2, (-0.1, 10.0)).unwrap_err();
        // psi(d_6, -0.1) = 0.7^0.905 > 0.2, but psi(d_1, -0.1) = 0.054 < 0.2
        assert!(matches!(e, CrmError::PartitionInfeasible { dose: 0, .. }));
    }

    #[test]
    fn exact_skeleton_is_consistent() {
        let m = WorkingModel::power_exp(TRUTH.to_vec()).unwrap();
        let r = check_consistency(&m, &TRUTH, 0.2).unwrap();
        assert_eq!(r.mtd, 1);
        assert!(r.a_constants.iter().all(|a| a.abs() < 1e-12));
        assert!(r.all_in_set());
    }

    #[test]
    fn illustration_truth_mtd_is_level_two() {
        let m = WorkingModel::power_direct(ALPHA.to_vec()).unwrap();
        let r = check_consistency(&m, &TRUTH, 0.2).unwrap();
        assert_eq!(r.mtd, 1);
        assert!(!r.mtd_tie);
        assert!((r.theta0 - 0.22).abs() < 1e-15);
        assert!(r.members_in_set[1]);
        // membership agrees with a brute-force scan of the closest dose
        let (lo, hi) = (0.0, 3.0);
        for (i, &a) in r.a_constants.iter().enumerate() {
            let scan = (0..100_000).any(|j| {
                let x = lo + (hi - lo) * (j as f64 + 0.5) / 1e5;
                (x - a).abs() < 1.5e-5 && closest_to_target(&m.curve(x), 0.2).0 == 1
            });
            let direct = closest_to_target(&m.curve(a), 0.2).0 == 1;
            assert_eq!(r.members_in_set[i], direct, "dose {i}");
            assert_eq!(r.members_in_set[i], scan, "dose {i}");
        }
    }

    #[test]
    fn single_record_estimating_function() {
        let m = WorkingModel::power_exp(ALPHA.to_vec()).unwrap();
        let h = TrialHistory::from_pairs(&[(2, true)]);
        let v = estimating_function(&m, &h, 0.3).unwrap();
        assert_eq!(v, estimating_term(&m, 1.0, 2, 0.3));
    }
}
