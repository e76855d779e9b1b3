//! Likelihood and Bayesian inference for one-parameter working models.

pub mod class;
pub mod interval;
pub mod likelihood;
pub mod posterior;
pub mod prior;

pub use class::{model_class_fit, model_class_posterior, ClassFit};
pub use interval::{confidence_interval, interval_from_variance, ConfidenceInterval};
pub use likelihood::{log_likelihood, mle, mle_logistic, mle_tally};
pub use posterior::{posterior, PosteriorSummary};
pub use prior::PriorSpec;
