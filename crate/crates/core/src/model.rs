//! Working dose-toxicity models.
//!
//! A working model is a deliberately under-parameterized curve `psi(d_i, a)`
//! over a fixed grid of dose levels. Doses are addressed by zero-based index;
//! the labels carried by a [`Skeleton`] are opaque.

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};

/// Ordered dose labels together with the per-dose working-model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonRepr", into = "SkeletonRepr")]
pub struct Skeleton {
    doses: Vec<String>,
    alpha: Vec<f64>,
    ln_alpha: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doses: Option<Vec<String>>,
    alpha: Vec<f64>,
}

impl TryFrom<SkeletonRepr> for Skeleton {
    type Error = CrmError;

    fn try_from(r: SkeletonRepr) -> Result<Self> {
        match r.doses {
            Some(doses) => Skeleton::with_labels(doses, r.alpha),
            None => Skeleton::new(r.alpha),
        }
    }
}

impl From<Skeleton> for SkeletonRepr {
    fn from(s: Skeleton) -> Self {
        SkeletonRepr { doses: Some(s.doses), alpha: s.alpha }
    }
}

impl Skeleton {
    /// Skeleton with labels `"1".."k"`.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let doses = (1..=alpha.len()).map(|i| i.to_string()).collect();
        Self::with_labels(doses, alpha)
    }

    pub fn with_labels(doses: Vec<String>, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(CrmError::InvalidSkeleton(format!(
                "need at least 2 dose levels, got {}",
                alpha.len()
            )));
        }
        if doses.len() != alpha.len() {
            return Err(CrmError::InvalidSkeleton(format!(
                "{} labels for {} constants",
                doses.len(),
                alpha.len()
            )));
        }
        for (i, &a) in alpha.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(CrmError::InvalidSkeleton(format!("alpha[{i}] = {a} is not in (0, 1)")));
            }
            if i > 0 && a <= alpha[i - 1] {
                return Err(CrmError::InvalidSkeleton(format!(
                    "alpha must be strictly increasing: alpha[{}] = {} >= alpha[{i}] = {a}",
                    i - 1,
                    alpha[i - 1]
                )));
            }
        }
        let ln_alpha = alpha.iter().map(|a| a.ln()).collect();
        Ok(Skeleton { doses, alpha, ln_alpha })
    }

    pub fn levels(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub(crate) fn ln_alpha(&self) -> &[f64] {
        &self.ln_alpha
    }

    pub fn labels(&self) -> &[String] {
        &self.doses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `psi = alpha_i ^ exp(a)`, `a` real.
    PowerExp,
    /// `psi = alpha_i ^ a`, `a > 0`.
    PowerDirect,
    /// `psi = logit^-1(a * alpha_i + b)`, `a > 0`.
    Logistic2p,
}

impl ModelKind {
    pub fn arity(self) -> usize {
        match self {
            ModelKind::Logistic2p => 2,
            _ => 1,
        }
    }

    /// Default search/integration bounds `[A, B]` for the scalar parameter.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            ModelKind::PowerExp => (-10.0, 10.0),
            ModelKind::PowerDirect => (1e-4, 1e4),
            ModelKind::Logistic2p => (1e-4, 1e4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Params {
    One(f64),
    Two(f64, f64),
}

impl From<f64> for Params {
    fn from(a: f64) -> Self {
        Params::One(a)
    }
}

impl From<(f64, f64)> for Params {
    fn from((a, b): (f64, f64)) -> Self {
        Params::Two(a, b)
    }
}

impl Params {
    fn arity(&self) -> usize {
        match self {
            Params::One(_) => 1,
            Params::Two(..) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorkingModelRepr", into = "WorkingModelRepr")]
pub struct WorkingModel {
    kind: ModelKind,
    skeleton: Skeleton,
    bounds: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct WorkingModelRepr {
    kind: ModelKind,
    skeleton: Skeleton,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<(f64, f64)>,
}

impl TryFrom<WorkingModelRepr> for WorkingModel {
    type Error = CrmError;

    fn try_from(r: WorkingModelRepr) -> Result<Self> {
        let m = WorkingModel::new(r.kind, r.skeleton);
        match r.bounds {
            Some((lo, hi)) => m.with_bounds(lo, hi),
            None => Ok(m),
        }
    }
}

impl From<WorkingModel> for WorkingModelRepr {
    fn from(m: WorkingModel) -> Self {
        WorkingModelRepr { kind: m.kind, skeleton: m.skeleton, bounds: Some(m.bounds) }
    }
}

impl WorkingModel {
    pub fn new(kind: ModelKind, skeleton: Skeleton) -> Self {
        WorkingModel { kind, bounds: kind.default_bounds(), skeleton }
    }

    pub fn power_exp(alpha: Vec<f64>) -> Result<Self> {
        Ok(Self::new(ModelKind::PowerExp, Skeleton::new(alpha)?))
    }

    pub fn power_direct(alpha: Vec<f64>) -> Result<Self> {
        Ok(Self::new(ModelKind::PowerDirect, Skeleton::new(alpha)?))
    }

    pub fn logistic(alpha: Vec<f64>) -> Result<Self> {
        Ok(Self::new(ModelKind::Logistic2p, Skeleton::new(alpha)?))
    }

    pub fn with_bounds(mut self, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(CrmError::ParameterOutOfDomain {
                value: lower,
                reason: format!("bounds [{lower}, {upper}] are not a finite interval"),
            });
        }
        if self.kind == ModelKind::PowerDirect && lower <= 0.0 {
            return Err(CrmError::ParameterOutOfDomain {
                value: lower,
                reason: "power-direct bounds must be positive".into(),
            });
        }
        self.bounds = (lower, upper);
        Ok(self)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn alpha(&self) -> &[f64] {
        self.skeleton.alpha()
    }

    pub fn levels(&self) -> usize {
        self.skeleton.levels()
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn is_one_parameter(&self) -> bool {
        self.kind.arity() == 1
    }

    /// Same kind and bounds on a different skeleton.
    pub fn with_skeleton(&self, skeleton: Skeleton) -> Self {
        WorkingModel { kind: self.kind, skeleton, bounds: self.bounds }
    }

    pub fn check_dose(&self, dose: usize) -> Result<()> {
        if dose >= self.levels() {
            return Err(CrmError::DoseOutOfRange { index: dose, levels: self.levels() });
        }
        Ok(())
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        if params.arity() != self.kind.arity() {
            return Err(CrmError::ParameterArity { expected: self.kind.arity(), got: params.arity() });
        }
        match (*params, self.kind) {
            (Params::One(a), ModelKind::PowerExp) if !a.is_finite() => {
                Err(out_of_domain(a, "parameter must be finite"))
            }
            (Params::One(a), ModelKind::PowerDirect) if !(a > 0.0 && a.is_finite()) => {
                Err(out_of_domain(a, "power-direct requires a > 0"))
            }
            (Params::Two(a, b), ModelKind::Logistic2p) => {
                // a = 0 is the flat closure of the domain; evaluation there is
                // allowed, the estimators never return it
                if !(a >= 0.0 && a.is_finite()) {
                    Err(out_of_domain(a, "logistic slope must be non-negative"))
                } else if !b.is_finite() {
                    Err(out_of_domain(b, "logistic intercept must be finite"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Toxicity probability at `dose` under `params`.
    pub fn psi(&self, dose: usize, params: impl Into<Params>) -> Result<f64> {
        let params = params.into();
        self.check_dose(dose)?;
        self.check_params(&params)?;
        Ok(match params {
            Params::One(a) => self.psi_at(dose, a),
            Params::Two(a, b) => logistic(a * self.alpha()[dose] + b),
        })
    }

    /// `d psi / d a` in closed form.
    pub fn psi_derivative(&self, dose: usize, params: impl Into<Params>) -> Result<f64> {
        let params = params.into();
        self.check_dose(dose)?;
        self.check_params(&params)?;
        Ok(match params {
            Params::One(a) => self.psi_at(dose, a) * self.dlog_psi(dose, a),
            Params::Two(a, b) => {
                let p = logistic(a * self.alpha()[dose] + b);
                self.alpha()[dose] * p * (1.0 - p)
            }
        })
    }

    /// `(d psi / d a, d psi / d b)` for the two-parameter logistic.
    pub fn psi_gradient2(&self, dose: usize, a: f64, b: f64) -> Result<(f64, f64)> {
        if self.kind != ModelKind::Logistic2p {
            return Err(CrmError::Unsupported("gradient in (a, b) needs logistic-2p".into()));
        }
        self.check_dose(dose)?;
        self.check_params(&Params::Two(a, b))?;
        let p = logistic(a * self.alpha()[dose] + b);
        let w = p * (1.0 - p);
        Ok((self.alpha()[dose] * w, w))
    }

    /// Per-dose toxicity probabilities for a one-parameter model.
    pub fn curve(&self, a: f64) -> Vec<f64> {
        (0..self.levels()).map(|i| self.psi_at(i, a)).collect()
    }

    // Unchecked one-parameter kernels. `log_psi` is exact in log space so the
    // likelihood stays finite where `psi` itself underflows.

    #[inline]
    pub(crate) fn psi_at(&self, dose: usize, a: f64) -> f64 {
        let alpha = self.alpha()[dose];
        match self.kind {
            ModelKind::PowerExp => alpha.powf(a.exp()),
            ModelKind::PowerDirect => alpha.powf(a),
            ModelKind::Logistic2p => unreachable!("one-parameter kernel on logistic-2p"),
        }
    }

    #[inline]
    pub(crate) fn log_psi(&self, dose: usize, a: f64) -> f64 {
        let ln_alpha = self.skeleton.ln_alpha()[dose];
        match self.kind {
            ModelKind::PowerExp => a.exp() * ln_alpha,
            ModelKind::PowerDirect => a * ln_alpha,
            ModelKind::Logistic2p => unreachable!("one-parameter kernel on logistic-2p"),
        }
    }

    /// First derivative of `log psi` in `a`.
    #[inline]
    pub(crate) fn dlog_psi(&self, dose: usize, a: f64) -> f64 {
        let ln_alpha = self.skeleton.ln_alpha()[dose];
        match self.kind {
            ModelKind::PowerExp => a.exp() * ln_alpha,
            ModelKind::PowerDirect => ln_alpha,
            ModelKind::Logistic2p => unreachable!("one-parameter kernel on logistic-2p"),
        }
    }

    /// Second derivative of `log psi` in `a`.
    #[inline]
    pub(crate) fn d2log_psi(&self, dose: usize, a: f64) -> f64 {
        match self.kind {
            ModelKind::PowerExp => a.exp() * self.skeleton.ln_alpha()[dose],
            ModelKind::PowerDirect => 0.0,
            ModelKind::Logistic2p => unreachable!("one-parameter kernel on logistic-2p"),
        }
    }
}

fn out_of_domain(value: f64, reason: &str) -> CrmError {
    CrmError::ParameterOutOfDomain { value, reason: reason.into() }
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One member of a model class: a working model plus an optional upward
/// shift of the dose index applied to patients in group `z = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMember {
    pub model: WorkingModel,
    #[serde(default)]
    pub group_shift: usize,
}

impl ClassMember {
    pub fn new(model: WorkingModel) -> Self {
        ClassMember { model, group_shift: 0 }
    }

    /// Index into the skeleton that carries the toxicity risk of a patient at
    /// `dose` in group `group`. Saturates at the top level.
    pub fn effective_dose(&self, dose: usize, group: Option<u8>) -> usize {
        match group {
            Some(1) => (dose + self.group_shift).min(self.model.levels() - 1),
            _ => dose,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelClassRepr", into = "ModelClassRepr")]
pub struct ModelClass {
    members: Vec<ClassMember>,
    prior_weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelClassRepr {
    members: Vec<ClassMember>,
    #[serde(default)]
    prior_weights: Option<Vec<f64>>,
}

impl TryFrom<ModelClassRepr> for ModelClass {
    type Error = CrmError;

    fn try_from(r: ModelClassRepr) -> Result<Self> {
        match r.prior_weights {
            Some(w) => ModelClass::new(r.members, w),
            None => ModelClass::uniform(r.members),
        }
    }
}

impl From<ModelClass> for ModelClassRepr {
    fn from(c: ModelClass) -> Self {
        ModelClassRepr { members: c.members, prior_weights: Some(c.prior_weights) }
    }
}

impl ModelClass {
    pub fn new(members: Vec<ClassMember>, prior_weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(CrmError::InvalidDesign("model class has no members".into()));
        }
        if members.len() != prior_weights.len() {
            return Err(CrmError::InvalidDesign(format!(
                "{} members but {} prior weights",
                members.len(),
                prior_weights.len()
            )));
        }
        let kind = members[0].model.kind();
        let levels = members[0].model.levels();
        for m in &members {
            if m.model.kind() != kind || m.model.levels() != levels {
                return Err(CrmError::InvalidDesign(
                    "model class members must share kind and number of levels".into(),
                ));
            }
            if !m.model.is_one_parameter() {
                return Err(CrmError::Unsupported(
                    "model classes are built from one-parameter members".into(),
                ));
            }
        }
        if prior_weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(CrmError::InvalidDesign("prior weights must be non-negative".into()));
        }
        let total: f64 = prior_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CrmError::InvalidDesign(format!("prior weights sum to {total}, not 1")));
        }
        Ok(ModelClass { members, prior_weights })
    }

    pub fn uniform(members: Vec<ClassMember>) -> Result<Self> {
        let m = members.len().max(1);
        Self::new(members, vec![1.0 / m as f64; m])
    }

    /// Model 1 (no group effect) and Model 2 (group `z = 1` behaves like
    /// the next dose up) on a shared working model, equal prior weights.
    pub fn two_group(model: WorkingModel) -> Self {
        let members = vec![ClassMember::new(model.clone()), ClassMember { model, group_shift: 1 }];
        ModelClass { members, prior_weights: vec![0.5, 0.5] }
    }

    pub fn members(&self) -> &[ClassMember] {
        &self.members
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}
