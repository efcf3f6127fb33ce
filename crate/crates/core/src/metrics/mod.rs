//! Evaluation surfaces: ROC analysis of LR scores, verdict confusion
//! matrices, two-cluster separability indices and a 2-D projection for
//! plotting.

use thiserror::Error;

use crate::pca::PcaError;

pub mod confusion;
pub mod projection;
pub mod roc;
pub mod separability;

pub use confusion::{confusion, ConfusionMatrix3x2};
pub use projection::{project_2d, ProjectedPoint};
pub use roc::{eer, roc_from_scores, tmr_at_fmr, RocCurve, RocPoint};
pub use separability::{separability, EmbeddingSpace, SeparabilityReport};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no {0} scores")]
    EmptyScores(&'static str),
    #[error("{which} score {index} is NaN")]
    NanScore { which: &'static str, index: usize },
    #[error("record {index} has an unknown label")]
    UnknownLabel { index: usize },
    #[error("{class} class has {found} vectors, need at least 2")]
    TooFewPerClass { class: &'static str, found: usize },
    #[error("need at least {needed} vectors, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error(transparent)]
    Pca(#[from] PcaError),
}
