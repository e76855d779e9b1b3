//! Allocation policies: from a history and a working model to the dose for
//! the next patient.

mod escalation;
mod msd;

pub use escalation::{mean_severity, two_stage_step, EscalationRule, StageDecision};
pub use msd::{most_successful, msd_fit, msd_next_dose, MsdFit, MsdSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::history::TrialHistory;
use crate::inference::{confidence_interval, mle, model_class_fit, posterior, ConfidenceInterval};
use crate::inference::{ClassFit, PriorSpec};
use crate::model::{ClassMember, ModelClass, ModelKind, Params, Skeleton, WorkingModel};

const MASS_TIE_TOL: f64 = 1e-9;

/// Which per-dose summary of the posterior drives allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Posterior mean of `psi(d_i, a)`.
    #[default]
    PosteriorMean,
    /// `psi(d_i, mu)` at the posterior mean `mu` of the parameter.
    PlugIn,
    /// Dose whose partition interval carries the most posterior mass.
    /// Needs a partition prior.
    IntervalMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inference {
    Bayes {
        prior: PriorSpec,
        #[serde(default)]
        estimate: Estimator,
    },
    /// Grade-driven escalation until the first dose-limiting toxicity, then
    /// maximum likelihood.
    LikelihoodTwoStage {
        #[serde(default)]
        escalation: EscalationRule,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distance {
    #[default]
    Symmetric,
    /// `w (p - theta)+ + (theta - p)+`: estimates above target count `w`
    /// times as much as those below.
    Asymmetric { over_weight: f64 },
}

impl Distance {
    pub fn eval(&self, estimate: f64, target: f64) -> f64 {
        match *self {
            Distance::Symmetric => (estimate - target).abs(),
            Distance::Asymmetric { over_weight } => {
                if estimate > target {
                    over_weight * (estimate - target)
                } else {
                    target - estimate
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    #[serde(default = "default_delta_prob")]
    pub delta_prob: f64,
}

fn default_delta_prob() -> f64 {
    0.5
}

impl Default for Randomization {
    fn default() -> Self {
        Randomization { delta_prob: default_delta_prob() }
    }
}

/// Alternative skeletons sharing the base model's kind and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub skeletons: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Two models with equal prior weight: no group effect, and group 1
    /// behaving like the next dose up.
    TwoGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPolicy {
    pub target: f64,
    pub inference: Inference,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize: Option<Randomization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_class: Option<ClassSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Grouping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msd: Option<MsdSpec>,
    /// Never go more than one level above the highest dose tried so far.
    #[serde(default = "yes")]
    pub no_skip: bool,
    /// Level of the interval reported with likelihood-based estimates.
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
}

fn yes() -> bool {
    true
}

fn default_ci_level() -> f64 {
    0.9
}

impl DesignPolicy {
    pub fn new(target: f64, inference: Inference) -> Self {
        DesignPolicy {
            target,
            inference,
            distance: Distance::Symmetric,
            randomize: None,
            model_class: None,
            grouping: None,
            msd: None,
            no_skip: true,
            ci_level: default_ci_level(),
        }
    }

    pub fn likelihood_two_stage(target: f64, escalation: EscalationRule) -> Self {
        Self::new(target, Inference::LikelihoodTwoStage { escalation })
    }

    pub fn bayes(target: f64, prior: PriorSpec, estimate: Estimator) -> Self {
        Self::new(target, Inference::Bayes { prior, estimate })
    }

    pub fn with_distance(mut self, distance: Distance) -> Self {
        self.distance = distance;
        self
    }

    pub fn with_randomization(mut self, r: Randomization) -> Self {
        self.randomize = Some(r);
        self
    }

    pub fn with_model_class(mut self, c: ClassSpec) -> Self {
        self.model_class = Some(c);
        self
    }

    pub fn with_grouping(mut self, g: Grouping) -> Self {
        self.grouping = Some(g);
        self
    }

    pub fn with_msd(mut self, m: MsdSpec) -> Self {
        self.msd = Some(m);
        self
    }

    pub fn with_no_skip(mut self, no_skip: bool) -> Self {
        self.no_skip = no_skip;
        self
    }

    pub fn prior(&self) -> &PriorSpec {
        match &self.inference {
            Inference::Bayes { prior, .. } => prior,
            Inference::LikelihoodTwoStage { .. } => &PriorSpec::None,
        }
    }

    pub fn is_two_stage(&self) -> bool {
        matches!(self.inference, Inference::LikelihoodTwoStage { .. })
    }

    /// Checks the policy against the working model it will drive. Messages
    /// start with the offending field.
    pub fn validate(&self, model: &WorkingModel) -> Result<()> {
        let bad = |field: &str, message: String| Err(CrmError::InvalidField { field: field.into(), message });
        let field_err =
            |field: &str, e: CrmError| CrmError::InvalidField { field: field.into(), message: e.to_string() };
        if !(self.target > 0.0 && self.target < 1.0) {
            return bad("target", format!("{} is not in (0, 1)", self.target));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad("ci_level", format!("{} is not in (0, 1)", self.ci_level));
        }
        if !model.is_one_parameter() {
            return bad("model.kind", "designs allocate with one-parameter working models".into());
        }
        if let Distance::Asymmetric { over_weight } = self.distance {
            if !(over_weight >= 1.0 && over_weight.is_finite()) {
                return bad("distance.over_weight", format!("{over_weight} must be finite and >= 1"));
            }
        }
        if let Some(r) = &self.randomize {
            if !(r.delta_prob > 0.0 && r.delta_prob < 1.0) {
                return bad("randomize.delta_prob", format!("{} is not in (0, 1)", r.delta_prob));
            }
        }
        let estimate = match &self.inference {
            Inference::Bayes { prior, estimate } => {
                prior.validate(model.levels()).map_err(|e| field_err("inference.prior", e))?;
                if prior.is_none() {
                    return bad(
                        "inference.prior",
                        "bayes mode needs a prior; use likelihood_two_stage for likelihood-only designs"
                            .into(),
                    );
                }
                if let PriorSpec::Partition { target, .. } = prior {
                    if *target != self.target {
                        return bad(
                            "inference.prior.target",
                            format!("{target} differs from the design target {}", self.target),
                        );
                    }
                }
                if let PriorSpec::Gamma { .. } = prior {
                    if model.kind() != ModelKind::PowerDirect {
                        return bad("inference.prior", "a gamma prior needs the power_direct kind".into());
                    }
                }
                if *estimate == Estimator::IntervalMass && !matches!(prior, PriorSpec::Partition { .. }) {
                    return bad("inference.estimate", "interval_mass needs a partition prior".into());
                }
                // builds the partition for partition priors
                posterior(model, &TrialHistory::new(), prior).map_err(|e| field_err("inference.prior", e))?;
                Some(*estimate)
            }
            Inference::LikelihoodTwoStage { escalation } => {
                escalation.validate().map_err(|e| field_err("inference.escalation", e))?;
                None
            }
        };
        let uses_class = self.model_class.is_some() || self.grouping.is_some();
        if self.model_class.is_some() && self.grouping.is_some() {
            return bad("grouping", "cannot be combined with model_class".into());
        }
        if uses_class {
            let field = if self.grouping.is_some() { "grouping" } else { "model_class" };
            match &self.inference {
                Inference::Bayes { prior, .. } => {
                    if !matches!(
                        prior,
                        PriorSpec::Gamma { .. } | PriorSpec::Normal { .. } | PriorSpec::Partition { .. }
                    ) {
                        return bad(field, "model weights need a gamma, normal or partition prior".into());
                    }
                }
                Inference::LikelihoodTwoStage { .. } => {
                    return bad(field, "model weights need bayes inference".into());
                }
            }
            if estimate == Some(Estimator::IntervalMass) {
                return bad("inference.estimate", "interval_mass is not available with a model class".into());
            }
            self.class(model).map_err(|e| field_err(field, e))?;
        }
        if let Some(m) = &self.msd {
            if uses_class || self.randomize.is_some() {
                return bad("msd", "cannot be combined with model classes or randomization".into());
            }
            let eff = m.efficacy_model().map_err(|e| field_err("msd.beta", e))?;
            if eff.levels() != model.levels() {
                return bad("msd.beta", format!("{} levels, skeleton has {}", eff.levels(), model.levels()));
            }
            match self.prior() {
                PriorSpec::None | PriorSpec::Normal { .. } => {}
                PriorSpec::Gamma { .. } => {
                    return bad("msd", "the response model is power_exp; use a normal prior".into())
                }
                _ => return bad("msd", "needs a normal prior or likelihood inference".into()),
            }
            if estimate == Some(Estimator::IntervalMass) {
                return bad("inference.estimate", "interval_mass is not available with msd".into());
            }
        }
        Ok(())
    }

    /// The model class implied by `model_class` or `grouping`, if any.
    pub fn class(&self, model: &WorkingModel) -> Result<Option<ModelClass>> {
        if self.grouping.is_some() {
            return Ok(Some(ModelClass::two_group(model.clone())));
        }
        let Some(spec) = &self.model_class else {
            return Ok(None);
        };
        let members = spec
            .skeletons
            .iter()
            .map(|alpha| Ok(ClassMember::new(model.with_skeleton(Skeleton::new(alpha.clone())?))))
            .collect::<Result<Vec<_>>>()?;
        let class = match &spec.prior_weights {
            Some(w) => ModelClass::new(members, w.clone())?,
            None => ModelClass::uniform(members)?,
        };
        Ok(Some(class))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StageOne,
    ModelBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    /// Dose before randomization.
    pub base: usize,
    pub delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Zero-based dose index.
    pub dose: usize,
    pub stage: Stage,
    pub rationale: String,
    /// Per-dose toxicity estimates used for allocation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<f64>>,
    /// Parameter estimate behind `estimates`: the MLE, or the posterior mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<ConfidenceInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_model: Option<usize>,
    /// Posterior mass of each partition interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_mass: Option<Vec<f64>>,
    /// Estimated success probabilities of a most-successful-dose design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomization: Option<RandomizationDraw>,
}

impl Recommendation {
    fn new(dose: usize, stage: Stage, rationale: String) -> Self {
        Recommendation {
            dose,
            stage,
            rationale,
            estimates: None,
            parameter: None,
            interval: None,
            model_weights: None,
            selected_model: None,
            interval_mass: None,
            success: None,
            randomization: None,
        }
    }

    /// Estimate at the recommended dose, when estimates exist.
    pub fn estimate_at_dose(&self) -> Option<f64> {
        self.estimates.as_ref().map(|e| e[self.dose])
    }
}

/// Index minimizing `distance(estimates[i], target)`; ties go to the lower
/// index and are reported.
pub fn select_dose(estimates: &[f64], target: f64, distance: &Distance) -> (usize, bool) {
    let mut best = 0;
    let mut best_d = distance.eval(estimates[0], target);
    let mut tie = false;
    for (i, &e) in estimates.iter().enumerate().skip(1) {
        let d = distance.eval(e, target);
        if d < best_d {
            best = i;
            best_d = d;
            tie = false;
        } else if d == best_d {
            tie = true;
        }
    }
    (best, tie)
}

/// Moves one level toward the target with probability `delta_prob`:
/// up when the estimate at `base` is at or below target, down otherwise.
/// At the edges of the grid allocation stays systematic and no draw is
/// taken.
pub fn randomized_next_dose<R: Rng + ?Sized>(
    delta_prob: f64,
    base: usize,
    estimate_at_base: f64,
    target: f64,
    levels: usize,
    rng: &mut R,
) -> (usize, Option<bool>) {
    let up = estimate_at_base <= target;
    if (up && base + 1 >= levels) || (!up && base == 0) {
        return (base, None);
    }
    let delta = rng.random_bool(delta_prob);
    match (up, delta) {
        (_, false) => (base, Some(false)),
        (true, true) => (base + 1, Some(true)),
        (false, true) => (base - 1, Some(true)),
    }
}

/// Dose for the next patient.
///
/// `next_group` is the group of the patient about to be treated and is
/// required by grouped designs. `rng` is only drawn from by randomized
/// designs.
pub fn next_dose<R: Rng + ?Sized>(
    policy: &DesignPolicy,
    model: &WorkingModel,
    history: &TrialHistory,
    next_group: Option<u8>,
    rng: &mut R,
) -> Result<Recommendation> {
    let k = model.levels();
    history.validate(k)?;
    if policy.grouping.is_some() && next_group.is_none() {
        return Err(CrmError::InvalidHistory("a grouped design needs the group of the next patient".into()));
    }
    if let Inference::LikelihoodTwoStage { escalation } = &policy.inference {
        if !escalation.stage_one_over(history) {
            return stage_one(escalation, history, k);
        }
    }
    let mut rec = model_based(policy, model, history, next_group)?;
    let cap = history.highest_dose_tried().map(|h| (h + 1).min(k - 1));
    let apply_cap = |rec: &mut Recommendation| {
        if let (true, Some(cap)) = (policy.no_skip, cap) {
            if rec.dose > cap {
                rec.rationale
                    .push_str(&format!("; held at level {} to avoid skipping untried doses", cap + 1));
                rec.dose = cap;
            }
        }
    };
    apply_cap(&mut rec);
    if let (Some(r), Some(est)) = (&policy.randomize, rec.estimates.as_ref()) {
        let base = rec.dose;
        let (dose, delta) = randomized_next_dose(r.delta_prob, base, est[base], policy.target, k, rng);
        if let Some(delta) = delta {
            rec.randomization = Some(RandomizationDraw { base, delta });
            if dose != base {
                rec.rationale.push_str(&format!(
                    "; randomized from level {} to level {}",
                    base + 1,
                    dose + 1
                ));
            }
        }
        rec.dose = dose;
        apply_cap(&mut rec);
    }
    if policy.is_two_stage() && policy.msd.is_none() {
        if let Some(a) = rec.parameter {
            rec.interval = confidence_interval(model, history, a, rec.dose, policy.ci_level).ok();
        }
    }
    Ok(rec)
}

fn stage_one(rule: &EscalationRule, history: &TrialHistory, levels: usize) -> Result<Recommendation> {
    let Some(last) = history.last() else {
        return Ok(Recommendation::new(0, Stage::StageOne, "stage one: start at the lowest level".into()));
    };
    let current = last.dose;
    let decision = two_stage_step(rule, history, levels)?;
    let severity = mean_severity(rule, history, current)?.unwrap_or(0.0);
    let n = history.records().iter().filter(|r| r.dose == current).count();
    let (dose, why) = match decision {
        StageDecision::Escalate => (
            current + 1,
            format!(
                "stage one: escalate from level {} ({n} treated, mean severity {severity:.3})",
                current + 1
            ),
        ),
        StageDecision::Stay if history.has_dlt() => {
            (current, format!("stage one: complete the cohort at level {}", current + 1))
        }
        StageDecision::Stay => (
            current,
            format!("stage one: stay at level {} ({n} treated, mean severity {severity:.3})", current + 1),
        ),
        StageDecision::HandOff => unreachable!("stage one is still running"),
    };
    Ok(Recommendation::new(dose, Stage::StageOne, why))
}

fn describe(dose: usize, estimate: f64, target: f64, tie: bool) -> String {
    let mut s =
        format!("level {} has estimated toxicity {estimate:.3}, closest to target {target}", dose + 1);
    if tie {
        s.push_str(" (tie broken toward the lower level)");
    }
    s
}

fn model_based(
    policy: &DesignPolicy,
    model: &WorkingModel,
    history: &TrialHistory,
    next_group: Option<u8>,
) -> Result<Recommendation> {
    let target = policy.target;
    if policy.is_two_stage() && !history.is_heterogeneous() {
        return Ok(Recommendation::new(
            0,
            Stage::ModelBased,
            "no non-toxic response yet; the likelihood has no interior maximum, stay at the lowest level"
                .into(),
        ));
    }
    if let Some(spec) = &policy.msd {
        let fit = msd_fit(spec, model, history, policy.prior())?;
        let mut rec = Recommendation::new(
            fit.dose,
            Stage::ModelBased,
            format!(
                "level {} has the largest estimated success probability {:.3}",
                fit.dose + 1,
                fit.success[fit.dose]
            ),
        );
        rec.parameter = Some(fit.a);
        rec.estimates = Some(fit.toxicity);
        rec.success = Some(fit.success);
        return Ok(rec);
    }
    if let Some(class) = policy.class(model)? {
        let estimate = match &policy.inference {
            Inference::Bayes { estimate, .. } => *estimate,
            _ => Estimator::PosteriorMean,
        };
        let group = next_group.unwrap_or(0);
        let (fit, best, est) = class_estimates(&class, history, policy.prior(), group, estimate)?;
        let (dose, tie) = select_dose(&est, target, &policy.distance);
        let mut rec = Recommendation::new(
            dose,
            Stage::ModelBased,
            format!(
                "model {} has posterior weight {:.3}; {}",
                best + 1,
                fit.weights[best],
                describe(dose, est[dose], target, tie)
            ),
        );
        rec.parameter = Some(fit.members[best].mean);
        rec.estimates = Some(est);
        rec.model_weights = Some(fit.weights);
        rec.selected_model = Some(best);
        return Ok(rec);
    }
    match &policy.inference {
        Inference::LikelihoodTwoStage { .. } => {
            let Params::One(a) = mle(model, history)? else { unreachable!("validated one-parameter model") };
            let est = model.curve(a);
            let (dose, tie) = select_dose(&est, target, &policy.distance);
            let mut rec =
                Recommendation::new(dose, Stage::ModelBased, describe(dose, est[dose], target, tie));
            rec.parameter = Some(a);
            rec.estimates = Some(est);
            Ok(rec)
        }
        Inference::Bayes { prior, estimate } => {
            let s = posterior(model, history, prior)?;
            let est = match estimate {
                Estimator::PlugIn => s.plug_in.clone(),
                _ => s.estimates.clone(),
            };
            let mut rec = if *estimate == Estimator::IntervalMass {
                let mass = s.interval_mass.as_ref().expect("partition prior");
                // masses equal up to quadrature error count as tied
                let mut dose = 0;
                for i in 1..mass.len() {
                    if mass[i] > mass[dose] + MASS_TIE_TOL {
                        dose = i;
                    }
                }
                Recommendation::new(
                    dose,
                    Stage::ModelBased,
                    format!("level {} owns the largest posterior mass {:.3}", dose + 1, mass[dose]),
                )
            } else {
                let (dose, tie) = select_dose(&est, target, &policy.distance);
                Recommendation::new(dose, Stage::ModelBased, describe(dose, est[dose], target, tie))
            };
            rec.parameter = Some(s.mean);
            rec.estimates = Some(est);
            rec.interval_mass = s.interval_mass;
            Ok(rec)
        }
    }
}

/// Fits the class, picks the member with the largest weight (ties to the
/// earlier one) and returns its per-dose estimates for patients in `group`.
fn class_estimates(
    class: &ModelClass,
    history: &TrialHistory,
    prior: &PriorSpec,
    group: u8,
    estimate: Estimator,
) -> Result<(ClassFit, usize, Vec<f64>)> {
    let fit = model_class_fit(class, history, prior)?;
    let best = fit.best();
    let member = &class.members()[best];
    let summary = &fit.members[best];
    let source = match estimate {
        Estimator::PlugIn => &summary.plug_in,
        _ => &summary.estimates,
    };
    let est = (0..member.model.levels()).map(|i| source[member.effective_dose(i, Some(group))]).collect();
    Ok((fit, best, est))
}

/// Two-group allocation: select the member with the larger posterior weight,
/// then the dose closest to `target` under that member's curve for `group`.
pub fn two_group_next_dose(
    class: &ModelClass,
    history: &TrialHistory,
    prior: &PriorSpec,
    group: u8,
    target: f64,
) -> Result<Recommendation> {
    if group > 1 {
        return Err(CrmError::InvalidHistory(format!("group {group} is not 0 or 1")));
    }
    let (fit, best, est) = class_estimates(class, history, prior, group, Estimator::PosteriorMean)?;
    let (dose, tie) = select_dose(&est, target, &Distance::Symmetric);
    let mut rec = Recommendation::new(dose, Stage::ModelBased, describe(dose, est[dose], target, tie));
    rec.parameter = Some(fit.members[best].mean);
    rec.estimates = Some(est);
    rec.model_weights = Some(fit.weights);
    rec.selected_model = Some(best);
    Ok(rec)
}
