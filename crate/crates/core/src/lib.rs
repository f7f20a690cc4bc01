//! Pairwise-comparison quality scaling.
//!
//! The crate turns per-dataset mean opinion scores (MOS) into five-level
//! comparative instruction corpora, aggregates comparator outputs into
//! preference probabilities against a small anchor set, and recovers a
//! continuous quality score for a test image by MAP estimation under
//! Thurstone's Case V model.
//!
//! Pipeline, module by module:
//!
//! * [`dataset`]: metadata ingest and content-independent splits.
//! * [`corpus`]: five-level labelling and JSONL instruction corpora.
//! * [`comparator`]: the pairwise comparison contract plus oracle, cache and
//!   remote backends.
//! * [`anchors`]: quality intervals and minimum-variance anchor selection.
//! * [`scaling`]: soft comparison, preference/count matrices, the MAP solver.
//! * [`eval`]: SRCC/PLCC/accuracy metrics and multi-split experiments.
//! * [`cli`]: the `pairscale` command-line front end.

#![allow(clippy::needless_range_loop)]

pub mod anchors;
pub mod cli;
pub mod comparator;
pub mod corpus;
pub mod dataset;
mod error;
pub mod eval;
pub mod par;
pub mod scaling;
pub mod synth;

pub use anchors::{partition_intervals, select_anchors, select_anchors_random, AnchorSet};
pub use comparator::{
    CacheComparator, Comparator, ComparatorConfig, ComparatorError, ComparisonLogits, OracleComparator, OracleMode,
    RemoteComparator,
};
pub use corpus::{classify_level, quality_difference, ComparativeLevel, QualityDifference};
pub use dataset::{load_dataset, split_dataset, ImageRecord, SplitAssignment};
pub use error::{Error, Result};
pub use par::Execution;
pub use scaling::{
    log_norm_cdf, soft_preference, solve_map, CountMatrix, PreferenceMatrix, Prior, ScaleScores, SolverConfig,
};
