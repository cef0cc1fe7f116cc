//! Bias mitigation at the three points of a training pipeline.

pub mod adversarial;
pub mod post;
pub mod pre;
pub mod reductions;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::learners::LearnerError;
use crate::metrics::MetricError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MitigationError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("plan does not match table: {0}")]
    Plan(String),
    #[error("unknown cell: {0}")]
    UnknownCell(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, MitigationError>;
