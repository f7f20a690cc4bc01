//! Soft comparison, preference/count matrices and quality-score recovery.
//!
//! Orientation convention used throughout: `entries[i][j]` is the evidence
//! that item `i` is preferred over item `j`. A comparator called with
//! `(first, second)` reports on the *second* image, so its soft preference
//! lands in `entries[second][first]`.

pub mod normal;
mod solver;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparator::{Comparator, ComparatorError, ComparisonLogits};
use crate::corpus::ComparativeLevel;
use crate::dataset::ImageRecord;
use crate::par::{self, Execution};

pub use normal::{log_norm_cdf, norm_cdf};
pub use solver::{solve_map, solve_map_report, Objective, Prior, SolveReport, SolverConfig, PROB_CLAMP};

/// Tolerance for validating externally supplied matrices.
const INPUT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least 2 items, got {0}")]
    TooSmall(usize),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("comparing ({first}, {second}): {source}")]
    Compare {
        first: String,
        second: String,
        #[source]
        source: ComparatorError,
    },
}

/// Square matrix of non-negative pairwise evidence.
pub trait PairwiseMatrix {
    fn size(&self) -> usize;
    fn entry(&self, i: usize, j: usize) -> f64;
}

/// Zero-sum latent quality scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleScores(pub Vec<f64>);

impl ScaleScores {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn last(&self) -> f64 {
        *self.0.last().expect("scores are never empty")
    }
}

/// Probability matrix with `p[i][j] + p[j][i] = 1` and a 0.5 diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl PreferenceMatrix {
    /// All entries 0.5.
    pub fn uniform(n: usize) -> Self {
        Self { n, entries: vec![0.5; n * n] }
    }

    /// Validates rows and rebuilds the lower triangle from the upper one,
    /// so complement-antisymmetry holds exactly.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ScalingError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(ScalingError::SizeMismatch { expected: n, got: bad.len() });
        }
        let mut m = Self::uniform(n);
        for i in 0..n {
            if (rows[i][i] - 0.5).abs() > INPUT_TOL {
                return Err(ScalingError::InvalidMatrix(format!("diagonal ({i},{i}) = {} != 0.5", rows[i][i])));
            }
            for j in (i + 1)..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                    return Err(ScalingError::InvalidMatrix(format!("entry ({i},{j}) or ({j},{i}) outside [0, 1]")));
                }
                if (a + b - 1.0).abs() > INPUT_TOL {
                    return Err(ScalingError::InvalidMatrix(format!("({i},{j}) + ({j},{i}) = {} != 1", a + b)));
                }
                m.set_pair(i, j, a);
            }
        }
        Ok(m)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Sets `p[i][j] = p` and `p[j][i] = 1 - p`.
    pub fn set_pair(&mut self, i: usize, j: usize, p: f64) {
        let n = self.n;
        self.entries[i * n + j] = p;
        self.entries[j * n + i] = 1.0 - p;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n.max(1)).map(<[f64]>::to_vec).take(self.n).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        Self { n, entries: (0..n * n).map(|k| self.entries[(k % n) * n + k / n]).collect() }
    }

    /// `out[i][j] = self[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        Self { n, entries: (0..n * n).map(|k| self.get(perm[k / n], perm[k % n])).collect() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

impl PairwiseMatrix for PreferenceMatrix {
    fn size(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.get(i, j)
        }
    }
}

/// Accumulated (possibly fractional) win counts with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ScalingError> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ScalingError::SizeMismatch { expected: n, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ScalingError::InvalidMatrix(format!("count ({i},{j}) = {v}")));
                }
                if i != j {
                    m.entries[i * n + j] = v;
                }
            }
        }
        Ok(m)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Records one comparison of `first` vs `second` in which the second
    /// item earned `weight` (the first earns `1 - weight`).
    pub fn record(&mut self, first: usize, second: usize, weight: f64) {
        let n = self.n;
        self.entries[second * n + first] += weight;
        self.entries[first * n + second] += 1.0 - weight;
    }

    /// Copy with one extra (zero) row and column.
    pub fn grown(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                out.entries[i * (n + 1) + j] = self.get(i, j);
            }
        }
        out
    }
}

impl PairwiseMatrix for CountMatrix {
    fn size(&self) -> usize {
        self.n
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

/// Parses a plain-text CSV square matrix.
pub fn parse_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>, ScalingError> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(r, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        ScalingError::InvalidMatrix(format!("row {}: cannot parse `{}`", r + 1, cell.trim()))
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|r| r.len() != rows.len()) {
        return Err(ScalingError::SizeMismatch { expected: rows.len(), got: bad.len() });
    }
    Ok(rows)
}

/// Weighted sum of level probabilities with weights 0, .25, .5, .75, 1.
pub fn weighted_preference(probs: &[f64; 5]) -> f64 {
    probs.iter().zip(ComparativeLevel::WEIGHTS).map(|(p, w)| p * w).sum::<f64>().clamp(0.0, 1.0)
}

/// Probability that the second image is preferred over the first.
pub fn soft_preference(logits: &ComparisonLogits) -> f64 {
    weighted_preference(&logits.probabilities())
}

fn compare(cmp: &impl Comparator, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ScalingError> {
    cmp.compare(first, second).map_err(|source| ScalingError::Compare {
        first: first.image_id.clone(),
        second: second.image_id.clone(),
        source,
    })
}

/// Estimate of P(second preferred over first), optionally averaged with
/// the reversed presentation order.
fn pair_preference(
    cmp: &impl Comparator,
    first: &ImageRecord,
    second: &ImageRecord,
    symmetrize: bool,
) -> Result<f64, ScalingError> {
    let p = soft_preference(&compare(cmp, first, second)?);
    if !symmetrize {
        return Ok(p);
    }
    let reversed = soft_preference(&compare(cmp, second, first)?);
    Ok((p + (1.0 - reversed)) / 2.0)
}

fn upper_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect()
}

/// Preference matrix over the anchors. Each unordered pair is compared
/// once with the lower index first and mirrored.
pub fn build_anchor_matrix(
    anchors: &[&ImageRecord],
    cmp: &impl Comparator,
    symmetrize: bool,
) -> Result<PreferenceMatrix, ScalingError> {
    let m = anchors.len();
    if m < 2 {
        return Err(ScalingError::TooSmall(m));
    }
    let pairs = upper_pairs(m);
    let probs =
        par::try_map(Execution::default(), &pairs, |&(i, j)| pair_preference(cmp, anchors[i], anchors[j], symmetrize))?;
    let mut out = PreferenceMatrix::uniform(m);
    for (&(i, j), p) in pairs.iter().zip(probs) {
        out.set_pair(j, i, p);
    }
    Ok(out)
}

/// Appends the test image: `b[n]` is the probability that the test image
/// is preferred over anchor `n`.
pub fn extend_matrix(anchor_matrix: &PreferenceMatrix, b: &[f64]) -> Result<PreferenceMatrix, ScalingError> {
    let m = anchor_matrix.size();
    if b.len() != m {
        return Err(ScalingError::SizeMismatch { expected: m, got: b.len() });
    }
    if let Some(v) = b.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(ScalingError::InvalidMatrix(format!("test preference {v} outside [0, 1]")));
    }
    let mut out = PreferenceMatrix::uniform(m + 1);
    for i in 0..m {
        for j in (i + 1)..m {
            out.set_pair(i, j, anchor_matrix.get(i, j));
        }
        out.set_pair(m, i, b[i]);
    }
    Ok(out)
}

/// Hard-decision count matrix over the anchors (and the test image, when
/// given, as the last item). Each comparison adds the top-1 level weight to
/// the second item and its complement to the first.
pub fn build_count_matrix(
    anchors: &[&ImageRecord],
    test: Option<&ImageRecord>,
    cmp: &impl Comparator,
    symmetrize: bool,
) -> Result<CountMatrix, ScalingError> {
    let m = anchors.len();
    if m < 2 {
        return Err(ScalingError::TooSmall(m));
    }
    let mut counts = CountMatrix::zeros(m);
    for (i, j) in upper_pairs(m) {
        record_hard(&mut counts, cmp, (i, anchors[i]), (j, anchors[j]), symmetrize)?;
    }
    match test {
        None => Ok(counts),
        Some(t) => extend_counts(&counts, anchors, t, cmp, symmetrize),
    }
}

fn record_hard(
    counts: &mut CountMatrix,
    cmp: &impl Comparator,
    (i, first): (usize, &ImageRecord),
    (j, second): (usize, &ImageRecord),
    symmetrize: bool,
) -> Result<(), ScalingError> {
    counts.record(i, j, compare(cmp, first, second)?.top_level().weight());
    if symmetrize {
        counts.record(j, i, compare(cmp, second, first)?.top_level().weight());
    }
    Ok(())
}

fn extend_counts(
    anchor_counts: &CountMatrix,
    anchors: &[&ImageRecord],
    test: &ImageRecord,
    cmp: &impl Comparator,
    symmetrize: bool,
) -> Result<CountMatrix, ScalingError> {
    let m = anchors.len();
    let mut counts = anchor_counts.grown();
    for (n, anchor) in anchors.iter().enumerate() {
        record_hard(&mut counts, cmp, (n, anchor), (m, test), symmetrize)?;
    }
    Ok(counts)
}

/// Which aggregation turns comparator output into solver evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    /// Soft comparison probabilities.
    #[default]
    Probability,
    /// Top-1 hard decisions.
    Count,
}

impl std::str::FromStr for MatrixKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "probability" => Ok(Self::Probability),
            "count" => Ok(Self::Count),
            _ => Err(format!("unknown matrix kind `{s}` (expected probability or count)")),
        }
    }
}

#[derive(Debug, Clone)]
enum AnchorEvidence {
    Probability(PreferenceMatrix),
    Count(CountMatrix),
}

/// Scores test images against a fixed anchor set. The anchor block is
/// computed once; each test image gets its own extended matrix and solve.
pub struct AnchorScorer<'a, C> {
    anchors: Vec<&'a ImageRecord>,
    evidence: AnchorEvidence,
    comparator: C,
    solver: SolverConfig,
    symmetrize: bool,
}

impl<'a, C: Comparator> AnchorScorer<'a, C> {
    pub fn new(
        anchors: Vec<&'a ImageRecord>,
        comparator: C,
        kind: MatrixKind,
        solver: SolverConfig,
        symmetrize: bool,
    ) -> Result<Self, ScalingError> {
        let evidence = match kind {
            MatrixKind::Probability => {
                AnchorEvidence::Probability(build_anchor_matrix(&anchors, &comparator, symmetrize)?)
            }
            MatrixKind::Count => AnchorEvidence::Count(build_count_matrix(&anchors, None, &comparator, symmetrize)?),
        };
        Ok(Self { anchors, evidence, comparator, solver, symmetrize })
    }

    /// Uses a precomputed anchor preference matrix.
    pub fn with_matrix(
        anchors: Vec<&'a ImageRecord>,
        anchor_matrix: PreferenceMatrix,
        comparator: C,
        solver: SolverConfig,
        symmetrize: bool,
    ) -> Result<Self, ScalingError> {
        if anchor_matrix.size() != anchors.len() {
            return Err(ScalingError::SizeMismatch { expected: anchors.len(), got: anchor_matrix.size() });
        }
        Ok(Self { anchors, evidence: AnchorEvidence::Probability(anchor_matrix), comparator, solver, symmetrize })
    }

    pub fn anchor_matrix(&self) -> Option<&PreferenceMatrix> {
        match &self.evidence {
            AnchorEvidence::Probability(p) => Some(p),
            AnchorEvidence::Count(_) => None,
        }
    }

    /// `b[n]` = probability the test image is preferred over anchor `n`.
    pub fn test_preferences(&self, test: &ImageRecord) -> Result<Vec<f64>, ScalingError> {
        self.anchors.iter().map(|a| pair_preference(&self.comparator, a, test, self.symmetrize)).collect()
    }

    /// Full zero-sum solution over anchors plus the test image (last).
    pub fn solve_with(&self, test: &ImageRecord) -> Result<ScaleScores, ScalingError> {
        match &self.evidence {
            AnchorEvidence::Probability(p) => {
                let full = extend_matrix(p, &self.test_preferences(test)?)?;
                solve_map(&full, &self.solver)
            }
            AnchorEvidence::Count(c) => {
                let full = extend_counts(c, &self.anchors, test, &self.comparator, self.symmetrize)?;
                solve_map(&full, &self.solver)
            }
        }
    }

    pub fn score(&self, test: &ImageRecord) -> Result<f64, ScalingError> {
        self.solve_with(test).map(|s| s.last())
    }

    pub fn score_all(&self, tests: &[&ImageRecord], exec: Execution) -> Result<Vec<f64>, ScalingError> {
        par::try_map(exec, tests, |t| self.score(t))
    }
}

/// One-shot scoring of a test image against anchors with a prebuilt
/// anchor matrix.
pub fn score_image(
    test: &ImageRecord,
    anchors: &[&ImageRecord],
    anchor_matrix: &PreferenceMatrix,
    cmp: &impl Comparator,
    cfg: &SolverConfig,
) -> Result<f64, ScalingError> {
    if anchor_matrix.size() != anchors.len() {
        return Err(ScalingError::SizeMismatch { expected: anchors.len(), got: anchor_matrix.size() });
    }
    let b: Vec<f64> =
        anchors.iter().map(|a| compare(cmp, a, test).map(|l| soft_preference(&l))).collect::<Result<_, _>>()?;
    Ok(solve_map(&extend_matrix(anchor_matrix, &b)?, cfg)?.last())
}
