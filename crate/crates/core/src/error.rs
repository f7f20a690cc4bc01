use thiserror::Error;

use crate::{anchors, comparator, corpus, dataset, eval, scaling};

/// Umbrella error for callers that drive the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Comparator(#[from] comparator::ComparatorError),
    #[error(transparent)]
    Anchor(#[from] anchors::AnchorError),
    #[error(transparent)]
    Scaling(#[from] scaling::ScalingError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
