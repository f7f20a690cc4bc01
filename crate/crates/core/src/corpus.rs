//! Five-level comparative labels and instruction corpora.
//!
//! Two images from the same dataset are compared through the Gaussian
//! difference of their opinion scores; the difference is banded at ±1 and
//! ±2 standard deviations into one of five comparative levels, which are
//! rendered into a fixed instruction/response template.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{largest_remainder, ImageRecord};

/// Floor on the combined standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

pub const INSTRUCTION: &str = "Compared with the first image <img1>, how is the quality of the second image <img2>?";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cross-dataset comparison forbidden ({first} vs {second})")]
    CrossDataset { first: String, second: String },
    #[error("requested {requested} pairs but only {max} distinct ordered pairs exist")]
    TooManyPairs { requested: usize, max: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the second image of a pair compares with the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparativeLevel {
    Inferior = 0,
    Worse = 1,
    Similar = 2,
    Better = 3,
    Superior = 4,
}

impl ComparativeLevel {
    pub const ALL: [ComparativeLevel; 5] = [Self::Inferior, Self::Worse, Self::Similar, Self::Better, Self::Superior];

    /// Preference weight of the second image: 0, .25, .5, .75, 1.
    pub const WEIGHTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn weight(self) -> f64 {
        Self::WEIGHTS[self.ordinal()]
    }

    /// The level seen from the other side of the pair.
    pub fn mirror(self) -> Self {
        Self::ALL[4 - self.ordinal()]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Inferior => "inferior",
            Self::Worse => "worse",
            Self::Similar => "similar",
            Self::Better => "better",
            Self::Superior => "superior",
        }
    }

    /// Word joining the level to "the first image".
    pub fn connective(self) -> &'static str {
        match self {
            Self::Worse | Self::Better => "than",
            Self::Inferior | Self::Similar | Self::Superior => "to",
        }
    }
}

impl fmt::Display for ComparativeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComparativeLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| format!("unknown level `{s}`"))
    }
}

/// Gaussian quality differential of an ordered pair (first minus second).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityDifference {
    pub mean_diff: f64,
    pub std_diff: f64,
}

impl QualityDifference {
    pub fn z(&self) -> f64 {
        self.mean_diff / self.std_diff
    }
}

pub fn quality_difference(first: &ImageRecord, second: &ImageRecord) -> Result<QualityDifference, CorpusError> {
    if first.dataset != second.dataset {
        return Err(CorpusError::CrossDataset { first: first.dataset.clone(), second: second.dataset.clone() });
    }
    Ok(QualityDifference { mean_diff: first.mos - second.mos, std_diff: first.std.hypot(second.std).max(STD_FLOOR) })
}

/// Bands the differential at ±σ and ±2σ. Bands are half-open on the left
/// (`lo < d <= hi`), so `d = σ` is similar while `d = -σ` is better.
pub fn classify_level(d: QualityDifference) -> ComparativeLevel {
    let QualityDifference { mean_diff: m, std_diff: s } = d;
    if m > 2.0 * s {
        ComparativeLevel::Inferior
    } else if m > s {
        ComparativeLevel::Worse
    } else if m > -s {
        ComparativeLevel::Similar
    } else if m > -2.0 * s {
        ComparativeLevel::Better
    } else {
        ComparativeLevel::Superior
    }
}

/// One rendered training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPair {
    #[serde(rename = "first_image")]
    pub first_id: String,
    #[serde(rename = "second_image")]
    pub second_id: String,
    pub instruction: String,
    pub response: String,
    pub level: ComparativeLevel,
    pub dataset: String,
}

pub fn response_text(level: ComparativeLevel) -> String {
    format!("The quality of the second image is {} {} the first image.", level.name(), level.connective())
}

pub fn render_pair(first: &ImageRecord, second: &ImageRecord) -> Result<InstructionPair, CorpusError> {
    let level = classify_level(quality_difference(first, second)?);
    Ok(InstructionPair {
        first_id: first.image_id.clone(),
        second_id: second.image_id.clone(),
        instruction: INSTRUCTION.to_string(),
        response: response_text(level),
        level,
        dataset: first.dataset.clone(),
    })
}

/// Maps a flat index in `0..n*(n-1)` to an ordered pair with `i != j`.
fn ordered_pair(k: usize, n: usize) -> (usize, usize) {
    let i = k / (n - 1);
    let r = k % (n - 1);
    (i, if r < i { r } else { r + 1 })
}

/// Samples `n` distinct ordered pairs of record indices.
///
/// Without balancing, pairs are drawn uniformly without replacement. With
/// `balance_levels`, candidates are drawn in random order and accepted while
/// their level is under an equal per-level quota; if some level runs dry the
/// shortfall is filled from the deferred candidates in draw order.
pub fn sample_pair_indices(
    records: &[ImageRecord],
    n: usize,
    seed: u64,
    balance_levels: bool,
) -> Result<Vec<(usize, usize)>, CorpusError> {
    let m = records.len();
    let max = m * m.saturating_sub(1);
    if n > max {
        return Err(CorpusError::TooManyPairs { requested: n, max });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if let Some(other) = records.iter().find(|r| r.dataset != records[0].dataset) {
        return Err(CorpusError::CrossDataset { first: records[0].dataset.clone(), second: other.dataset.clone() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !balance_levels {
        return Ok(index::sample(&mut rng, max, n).into_iter().map(|k| ordered_pair(k, m)).collect());
    }

    let quota = n.div_ceil(ComparativeLevel::ALL.len());
    let mut counts = [0usize; 5];
    let mut accepted = Vec::with_capacity(n);
    let mut deferred = Vec::new();
    let mut drawn = HashSet::new();
    while accepted.len() < n && drawn.len() < max {
        let k = rng.gen_range(0..max);
        if !drawn.insert(k) {
            continue;
        }
        let (i, j) = ordered_pair(k, m);
        let level = classify_level(quality_difference(&records[i], &records[j])?).ordinal();
        if counts[level] < quota {
            counts[level] += 1;
            accepted.push((i, j));
        } else {
            deferred.push((i, j));
        }
    }
    let short = n - accepted.len();
    accepted.extend(deferred.into_iter().take(short));
    Ok(accepted)
}

/// Like [`sample_pair_indices`] but returns image ids.
pub fn sample_pairs(
    records: &[ImageRecord],
    n: usize,
    seed: u64,
    balance_levels: bool,
) -> Result<Vec<(String, String)>, CorpusError> {
    Ok(sample_pair_indices(records, n, seed, balance_levels)?
        .into_iter()
        .map(|(i, j)| (records[i].image_id.clone(), records[j].image_id.clone()))
        .collect())
}

/// Splits a total pair budget across datasets proportionally to their
/// sizes (largest-remainder rounding).
pub fn allocate_pairs(total: usize, dataset_sizes: &[usize]) -> Vec<usize> {
    let sum: usize = dataset_sizes.iter().sum();
    if sum == 0 {
        return vec![0; dataset_sizes.len()];
    }
    let weights: Vec<f64> = dataset_sizes.iter().map(|&s| s as f64 / sum as f64).collect();
    largest_remainder(total, &weights)
}

/// Samples and renders a corpus for one dataset.
pub fn build_corpus(
    records: &[ImageRecord],
    n: usize,
    seed: u64,
    balance_levels: bool,
) -> Result<Vec<InstructionPair>, CorpusError> {
    sample_pair_indices(records, n, seed, balance_levels)?
        .into_iter()
        .map(|(i, j)| render_pair(&records[i], &records[j]))
        .collect()
}

/// Writes pairs as JSON Lines; returns the number written.
pub fn write_corpus<W: Write>(mut writer: W, pairs: &[InstructionPair]) -> Result<usize, CorpusError> {
    for p in pairs {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(pairs.len())
}

pub fn emit_corpus(pairs: &[InstructionPair], path: impl AsRef<Path>) -> Result<usize, CorpusError> {
    write_corpus(BufWriter::new(File::create(path)?), pairs)
}
