//! Replicated trials under a known truth.
//!
//! Each replicate owns two ChaCha8 streams derived from its seed: stream 0
//! draws outcomes, stream 1 feeds randomized allocation. Replicates run in
//! parallel and are folded in seed order, so results do not depend on the
//! thread schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{next_dose, DesignPolicy, Recommendation};
use crate::error::{CrmError, Result};
use crate::history::{PatientRecord, TrialHistory};
use crate::model::WorkingModel;
use crate::partition::closest_to_target;

const OUTCOME_STREAM: u64 = 0;
const DESIGN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupScenario {
    /// Group-1 patients at dose `d` carry the risk of dose `d + shift`,
    /// saturating at the top.
    pub shift: usize,
    #[serde(default = "half")]
    pub prob_group1: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// True toxicity probabilities `R(d_i)`.
    pub true_tox: Vec<f64>,
    /// True response probabilities `Q(d_i)` given no toxicity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_resp: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupScenario>,
    /// Per dose, probabilities of grades 0 to 3 given no dose-limiting
    /// toxicity. Without it a non-toxic patient has grade 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_probs: Option<Vec<[f64; 4]>>,
    /// Patients per trial.
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn new(true_tox: Vec<f64>, n: usize) -> Self {
        Scenario { name: None, true_tox, true_resp: None, group: None, grade_probs: None, n, seed: 0 }
    }

    pub fn with_response(mut self, q: Vec<f64>) -> Self {
        self.true_resp = Some(q);
        self
    }

    pub fn with_group_shift(mut self, shift: usize, prob_group1: f64) -> Self {
        self.group = Some(GroupScenario { shift, prob_group1 });
        self
    }

    pub fn levels(&self) -> usize {
        self.true_tox.len()
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        let bad = |m: String| Err(CrmError::InvalidScenario(m));
        if self.true_tox.len() != levels {
            return bad(format!("true_tox has {} levels, the skeleton {levels}", self.true_tox.len()));
        }
        if self.true_tox.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return bad("true_tox entries must lie in (0, 1)".into());
        }
        if self.true_tox.windows(2).any(|w| w[0] >= w[1]) {
            return bad("true_tox must be strictly increasing".into());
        }
        if let Some(q) = &self.true_resp {
            if q.len() != levels || q.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return bad("true_resp needs one entry in (0, 1) per level".into());
            }
        }
        if let Some(g) = &self.group {
            if !(g.prob_group1 >= 0.0 && g.prob_group1 <= 1.0) {
                return bad(format!("group.prob_group1 {} is not a probability", g.prob_group1));
            }
        }
        if let Some(gp) = &self.grade_probs {
            if gp.len() != levels {
                return bad("grade_probs needs one row per level".into());
            }
            for row in gp {
                let s: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return bad("each grade_probs row must be a distribution".into());
                }
            }
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        Ok(())
    }

    /// True risk for a patient at `dose` in `group`.
    pub fn risk(&self, dose: usize, group: Option<u8>) -> f64 {
        let idx = match (&self.group, group) {
            (Some(g), Some(1)) => (dose + g.shift).min(self.levels() - 1),
            _ => dose,
        };
        self.true_tox[idx]
    }

    /// Zero-based true MTD with the lower dose on ties.
    pub fn mtd(&self, target: f64) -> usize {
        closest_to_target(&self.true_tox, target).0
    }
}

/// Supplies patients' groups and outcomes to a simulated trial.
pub trait OutcomeSource {
    fn group(&mut self, patient: usize) -> Result<Option<u8>>;
    fn outcome(&mut self, patient: usize, dose: usize, group: Option<u8>) -> Result<PatientRecord>;
}

/// Outcomes drawn from a scenario.
pub struct BernoulliOutcomes<'a> {
    scenario: &'a Scenario,
    rng: ChaCha8Rng,
}

impl<'a> BernoulliOutcomes<'a> {
    pub fn new(scenario: &'a Scenario, rng: ChaCha8Rng) -> Self {
        BernoulliOutcomes { scenario, rng }
    }
}

impl OutcomeSource for BernoulliOutcomes<'_> {
    fn group(&mut self, _patient: usize) -> Result<Option<u8>> {
        Ok(match &self.scenario.group {
            Some(g) => Some(self.rng.random_bool(g.prob_group1) as u8),
            None => None,
        })
    }

    fn outcome(&mut self, _patient: usize, dose: usize, group: Option<u8>) -> Result<PatientRecord> {
        let s = self.scenario;
        let toxicity = self.rng.random::<f64>() < s.risk(dose, group);
        let mut rec = PatientRecord::new(dose, toxicity);
        rec.group = group;
        rec.grade = Some(if toxicity {
            4
        } else if let Some(gp) = &s.grade_probs {
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut g = 3;
            for (i, &p) in gp[dose].iter().enumerate() {
                acc += p;
                if u < acc {
                    g = i as u8;
                    break;
                }
            }
            g
        } else {
            0
        });
        if let (false, Some(q)) = (toxicity, &s.true_resp) {
            rec.response = Some(self.rng.random::<f64>() < q[dose]);
        }
        Ok(rec)
    }
}

/// One forced outcome; the dose is whatever the design chose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedOutcome {
    pub toxicity: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u8>,
}

impl ScriptedOutcome {
    pub fn toxic(toxicity: bool) -> Self {
        ScriptedOutcome { toxicity, ..Default::default() }
    }

    pub fn graded(grade: u8) -> Self {
        ScriptedOutcome { toxicity: grade == 4, grade: Some(grade), ..Default::default() }
    }
}

/// Plays back a fixed outcome list regardless of the dose given.
pub struct ScriptedOutcomes {
    script: Vec<ScriptedOutcome>,
}

impl ScriptedOutcomes {
    pub fn new(script: Vec<ScriptedOutcome>) -> Self {
        ScriptedOutcomes { script }
    }

    fn get(&self, patient: usize) -> Result<&ScriptedOutcome> {
        self.script
            .get(patient)
            .ok_or_else(|| CrmError::InvalidScenario(format!("script ends before patient {}", patient + 1)))
    }
}

impl OutcomeSource for ScriptedOutcomes {
    fn group(&mut self, patient: usize) -> Result<Option<u8>> {
        // the final recommendation asks for one patient past the script
        Ok(self.script.get(patient).and_then(|o| o.group))
    }

    fn outcome(&mut self, patient: usize, dose: usize, _group: Option<u8>) -> Result<PatientRecord> {
        let o = self.get(patient)?;
        Ok(PatientRecord { dose, toxicity: o.toxicity, group: o.group, grade: o.grade, response: o.response })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub history: TrialHistory,
    /// Recommendation issued before each patient.
    pub recommendations: Vec<Recommendation>,
    /// Recommendation after the last patient: the estimated MTD.
    pub recommendation: Recommendation,
}

impl TrialResult {
    pub fn path(&self) -> Vec<usize> {
        self.history.records().iter().map(|r| r.dose).collect()
    }
}

pub fn outcome_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(OUTCOME_STREAM);
    r
}

pub fn design_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(DESIGN_STREAM);
    r
}

/// Simulates one trial of `scenario.n` patients.
pub fn run_trial(
    policy: &DesignPolicy,
    model: &WorkingModel,
    scenario: &Scenario,
    seed: u64,
) -> Result<TrialResult> {
    scenario.validate(model.levels())?;
    policy.validate(model)?;
    let mut source = BernoulliOutcomes::new(scenario, outcome_rng(seed));
    run_trial_with(policy, model, scenario.n, &mut source, &mut design_rng(seed))
}

/// Runs `n` patients with outcomes from `source`. Policy errors carry the
/// one-based index of the patient being allocated.
pub fn run_trial_with<S: OutcomeSource + ?Sized, R: Rng + ?Sized>(
    policy: &DesignPolicy,
    model: &WorkingModel,
    n: usize,
    source: &mut S,
    rng: &mut R,
) -> Result<TrialResult> {
    let mut history = TrialHistory::new();
    let mut recommendations = Vec::with_capacity(n);
    for j in 0..n {
        let group = source.group(j)?;
        let rec = next_dose(policy, model, &history, group, rng).map_err(|e| e.at_patient(j + 1))?;
        history.push(source.outcome(j, rec.dose, group)?);
        recommendations.push(rec);
    }
    let group = source.group(n)?.or(policy.grouping.map(|_| 0));
    let recommendation = next_dose(policy, model, &history, group, rng).map_err(|e| e.at_patient(n + 1))?;
    Ok(TrialResult { history, recommendations, recommendation })
}

/// Per-replicate quantities that the operating characteristics fold over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub seed: u64,
    pub recommendation: usize,
    pub allocations: Vec<usize>,
    pub toxicities: usize,
    /// One-based index of the first patient from which every allocation
    /// equals the last one.
    pub settle_index: usize,
    pub final_dose: usize,
    /// `psi(x_{n+1}, a_n)`: the estimate at the final recommendation.
    pub theta_hat: Option<f64>,
}

impl ReplicateSummary {
    pub fn from_result(seed: u64, levels: usize, r: &TrialResult) -> Self {
        let path = r.path();
        let mut allocations = vec![0; levels];
        for &d in &path {
            allocations[d] += 1;
        }
        let final_dose = *path.last().expect("n >= 1");
        let run = path.iter().rev().take_while(|&&d| d == final_dose).count();
        ReplicateSummary {
            seed,
            recommendation: r.recommendation.dose,
            allocations,
            toxicities: r.history.toxicities(),
            settle_index: path.len() - run + 1,
            final_dose,
            theta_hat: r.recommendation.estimate_at_dose(),
        }
    }

    /// Length of the final constant run of allocations.
    pub fn final_run(&self, n: usize) -> usize {
        n + 1 - self.settle_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettleStats {
    /// Trailing allocations that must sit at the MTD to count as settled.
    pub window: usize,
    /// Fraction of replicates whose last `window` allocations are all the
    /// true MTD.
    pub settled_fraction: f64,
    pub mean_settle_index: f64,
    pub max_settle_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaHatStats {
    /// Replicates that ended with an estimate.
    pub count: usize,
    pub mean: f64,
    /// Sample variance of `theta_hat`.
    pub variance: f64,
    /// `n * variance`, the variance of `sqrt(n)(theta_hat - theta_0)`.
    pub scaled_variance: f64,
    pub theta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub replicates: usize,
    pub n: usize,
    /// Zero-based true MTD.
    pub mtd: usize,
    pub recommendation_dist: Vec<f64>,
    pub allocation_dist: Vec<f64>,
    pub toxicity_rate: f64,
    pub settle: SettleStats,
    pub theta_hat: ThetaHatStats,
}

impl OperatingCharacteristics {
    /// `(dose, recommended, allocated)` rows, one-based dose.
    pub fn per_dose_rows(&self) -> Vec<(usize, f64, f64)> {
        (0..self.recommendation_dist.len())
            .map(|i| (i + 1, self.recommendation_dist[i], self.allocation_dist[i]))
            .collect()
    }
}

/// Serial fold over replicate summaries.
#[derive(Debug, Clone)]
pub struct OcAccumulator {
    n: usize,
    mtd: usize,
    theta0: f64,
    window: usize,
    replicates: usize,
    recommended: Vec<usize>,
    allocated: Vec<usize>,
    toxicities: usize,
    settled: usize,
    settle_sum: f64,
    settle_max: usize,
    theta_hats: Vec<f64>,
}

impl OcAccumulator {
    pub fn new(levels: usize, n: usize, mtd: usize, theta0: f64) -> Self {
        OcAccumulator {
            n,
            mtd,
            theta0,
            window: n.div_ceil(5),
            replicates: 0,
            recommended: vec![0; levels],
            allocated: vec![0; levels],
            toxicities: 0,
            settled: 0,
            settle_sum: 0.0,
            settle_max: 0,
            theta_hats: Vec::new(),
        }
    }

    pub fn add(&mut self, s: &ReplicateSummary) {
        self.replicates += 1;
        self.recommended[s.recommendation] += 1;
        for (a, &c) in self.allocated.iter_mut().zip(&s.allocations) {
            *a += c;
        }
        self.toxicities += s.toxicities;
        if s.final_dose == self.mtd && s.final_run(self.n) >= self.window {
            self.settled += 1;
        }
        self.settle_sum += s.settle_index as f64;
        self.settle_max = self.settle_max.max(s.settle_index);
        if let Some(t) = s.theta_hat {
            self.theta_hats.push(t);
        }
    }

    pub fn finish(self) -> OperatingCharacteristics {
        let reps = self.replicates.max(1) as f64;
        let patients = (self.replicates * self.n).max(1) as f64;
        let count = self.theta_hats.len();
        let mean = if count > 0 { self.theta_hats.iter().sum::<f64>() / count as f64 } else { f64::NAN };
        let variance = if count > 1 {
            self.theta_hats.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            f64::NAN
        };
        OperatingCharacteristics {
            replicates: self.replicates,
            n: self.n,
            mtd: self.mtd,
            recommendation_dist: self.recommended.iter().map(|&c| c as f64 / reps).collect(),
            allocation_dist: self.allocated.iter().map(|&c| c as f64 / patients).collect(),
            toxicity_rate: self.toxicities as f64 / patients,
            settle: SettleStats {
                window: self.window,
                settled_fraction: self.settled as f64 / reps,
                mean_settle_index: self.settle_sum / reps,
                max_settle_index: self.settle_max,
            },
            theta_hat: ThetaHatStats {
                count,
                mean,
                variance,
                scaled_variance: self.n as f64 * variance,
                theta0: self.theta0,
            },
        }
    }
}

/// Runs the replicates with seeds `base_seed .. base_seed + replicates`.
pub fn replicate_summaries(
    policy: &DesignPolicy,
    model: &WorkingModel,
    scenario: &Scenario,
    replicates: usize,
    base_seed: u64,
) -> Result<Vec<ReplicateSummary>> {
    if replicates == 0 {
        return Err(CrmError::InvalidScenario("replicates must be at least 1".into()));
    }
    scenario.validate(model.levels())?;
    policy.validate(model)?;
    let k = model.levels();
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base_seed.wrapping_add(r);
            let mut source = BernoulliOutcomes::new(scenario, outcome_rng(seed));
            let result = run_trial_with(policy, model, scenario.n, &mut source, &mut design_rng(seed))?;
            Ok(ReplicateSummary::from_result(seed, k, &result))
        })
        .collect()
}

pub fn operating_characteristics(
    policy: &DesignPolicy,
    model: &WorkingModel,
    scenario: &Scenario,
    replicates: usize,
    base_seed: u64,
) -> Result<OperatingCharacteristics> {
    let summaries = replicate_summaries(policy, model, scenario, replicates, base_seed)?;
    let mtd = scenario.mtd(policy.target);
    let mut acc = OcAccumulator::new(model.levels(), scenario.n, mtd, scenario.true_tox[mtd]);
    for s in &summaries {
        acc.add(s);
    }
    Ok(acc.finish())
}
