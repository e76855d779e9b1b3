use thiserror::Error;

pub type Result<T, E = CrmError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrmError {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("dose index {index} out of range for {levels} levels")]
    DoseOutOfRange { index: usize, levels: usize },

    #[error("parameter {value} outside admissible domain: {reason}")]
    ParameterOutOfDomain { value: f64, reason: String },

    #[error("wrong parameter arity: model expects {expected}, got {got}")]
    ParameterArity { expected: usize, got: usize },

    #[error("no interior maximum of the likelihood: {0}")]
    NoInteriorMaximum(String),

    #[error("maximum likelihood estimate lies outside [{lower}, {upper}]")]
    MleOutsideBounds { lower: f64, upper: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("non-finite integrand at a = {0}")]
    NonFiniteIntegrand(f64),

    #[error("quadrature did not converge within {panels} panels")]
    QuadratureBudget { panels: usize },

    #[error("variance of the estimate is not positive: {0}")]
    DegenerateVariance(String),

    #[error("partition infeasible at dose {dose}: need psi(d, B) = {at_upper} < target {target} < psi(d, A) = {at_lower}")]
    PartitionInfeasible { dose: usize, target: f64, at_lower: f64, at_upper: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("{field}: {message}")]
    InvalidField { field: String, message: String },

    #[error("unsupported for this model kind: {0}")]
    Unsupported(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("patient {patient}: {source}")]
    AtPatient {
        patient: usize,
        #[source]
        source: Box<CrmError>,
    },
}

impl CrmError {
    pub(crate) fn at_patient(self, patient: usize) -> Self {
        CrmError::AtPatient { patient, source: Box::new(self) }
    }
}
