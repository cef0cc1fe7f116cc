//! Fairness auditing and bias mitigation for binary tabular classification.

pub mod causal;
pub mod compare;
pub mod dataset;
pub mod learners;
pub mod metrics;
pub mod mitigation;
pub mod pipeline;
pub mod synthgen;
