//! Correlation/accuracy metrics and multi-split experiments.

mod metrics;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{average_ranks, fit_logistic, level_accuracy, median, plcc, srcc, Logistic4};

use crate::anchors::{select_anchors, select_anchors_random};
use crate::comparator::{Comparator, ComparatorConfig};
use crate::corpus::{classify_level, quality_difference, sample_pair_indices, ComparativeLevel};
use crate::dataset::{self, load_split_file, split_dataset, DatasetFormat, ImageRecord, SplitAssignment};
use crate::par::{self, Execution};
use crate::scaling::{AnchorScorer, MatrixKind, SolverConfig};
use crate::synth::SyntheticSpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {truth} ground-truth values")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("degenerate ranking: zero rank variance")]
    DegenerateRanking,
    #[error("zero variance in correlation input")]
    ZeroVariance,
    #[error("experiment configuration: {0}")]
    Config(String),
    #[error("split {split} failed: {source}")]
    Split {
        split: usize,
        #[source]
        source: Box<crate::Error>,
    },
}

/// Per-split metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split_id: usize,
    pub n_items: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub mos: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub report: MetricReport,
    pub anchors: Vec<String>,
    pub scores: Vec<ScoredImage>,
}

/// Element-wise medians across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianSummary {
    pub srcc: f64,
    pub plcc: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub splits: Vec<SplitOutcome>,
    pub median: MedianSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorSource {
    #[default]
    MinVariance,
    Random,
}

/// Experiment description, read from a TOML key-value file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset metadata file; ignored when `synthetic` is set.
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Fixed split file overriding random splits (forces one split).
    pub split_file: Option<PathBuf>,
    pub comparator: ComparatorConfig,
    pub anchors: AnchorSource,
    pub alpha: usize,
    pub beta: usize,
    pub splits: usize,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    /// Defaults to grouping whenever every record has a `ref_group`.
    pub group_by_ref: Option<bool>,
    pub matrix: MatrixKind,
    pub symmetrize: bool,
    pub solver: SolverConfig,
    pub logistic_plcc: bool,
    pub accuracy_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synthetic: None,
            split_file: None,
            comparator: ComparatorConfig::default(),
            anchors: AnchorSource::MinVariance,
            alpha: 5,
            beta: 1,
            splits: 10,
            seed: 0,
            ratios: dataset::DEFAULT_RATIOS,
            group_by_ref: None,
            matrix: MatrixKind::Probability,
            symmetrize: false,
            solver: SolverConfig::default(),
            logistic_plcc: false,
            accuracy_pairs: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut().filter(|p| p.is_relative()) {
                *inner = base.join(&*inner);
            }
        };
        rebase(&mut cfg.dataset);
        rebase(&mut cfg.split_file);
        rebase(&mut cfg.comparator.cache_path);
        rebase(&mut cfg.comparator.image_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let err = |m: String| Err(EvalError::Config(m));
        if self.alpha == 0 || self.beta == 0 {
            return err("alpha and beta must be at least 1".into());
        }
        if self.alpha * self.beta < 2 {
            return err("need at least two anchors (alpha * beta >= 2)".into());
        }
        if self.splits == 0 {
            return err("splits must be at least 1".into());
        }
        self.comparator.validate().map_err(|e| EvalError::Config(e.to_string()))
    }

    pub fn load_records(&self) -> Result<Vec<ImageRecord>, crate::Error> {
        match (&self.synthetic, &self.dataset) {
            (Some(spec), _) => Ok(spec.generate()),
            (None, Some(path)) => Ok(dataset::load_dataset(path, DatasetFormat::Csv)?),
            (None, None) => Err(EvalError::Config("either `dataset` or `synthetic` must be given".into()).into()),
        }
    }
}

fn split_for(records: &[ImageRecord], cfg: &ExperimentConfig, seed: u64) -> Result<SplitAssignment, crate::Error> {
    if let Some(path) = &cfg.split_file {
        return Ok(load_split_file(path, records)?);
    }
    let group = cfg.group_by_ref.unwrap_or_else(|| records.iter().all(|r| r.ref_group.is_some()));
    Ok(split_dataset(records, cfg.ratios, seed, group)?)
}

fn pick<'a>(records: &'a [ImageRecord], ids: &[String]) -> Vec<&'a ImageRecord> {
    let by_id: std::collections::HashMap<&str, &ImageRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect()
}

/// Runs one split end to end.
pub fn run_split(
    records: &[ImageRecord],
    cfg: &ExperimentConfig,
    comparator: &dyn Comparator,
    split_id: usize,
    exec: Execution,
) -> Result<SplitOutcome, crate::Error> {
    let seed = cfg.seed.wrapping_add(split_id as u64);
    let split = split_for(records, cfg, seed)?;
    let train: Vec<ImageRecord> = pick(records, &split.train_val()).into_iter().cloned().collect();
    let test = pick(records, &split.test);

    let anchor_set = match cfg.anchors {
        AnchorSource::MinVariance => select_anchors(&train, cfg.alpha, cfg.beta)?,
        AnchorSource::Random => select_anchors_random(&train, cfg.alpha, cfg.beta, seed)?,
    };
    let anchors = anchor_set.resolve(&train)?;
    let scorer = AnchorScorer::new(anchors, comparator, cfg.matrix, cfg.solver, cfg.symmetrize)?;
    let scores = scorer.score_all(&test, exec)?;
    let mos: Vec<f64> = test.iter().map(|r| r.mos).collect();

    let accuracy = if cfg.accuracy_pairs > 0 && test.len() >= 2 {
        let owned: Vec<ImageRecord> = test.iter().map(|r| (*r).clone()).collect();
        let budget = cfg.accuracy_pairs.min(owned.len() * (owned.len() - 1));
        let pairs = sample_pair_indices(&owned, budget, seed, false)?;
        let outcomes =
            par::try_map(exec, &pairs, |&(i, j)| -> Result<(ComparativeLevel, ComparativeLevel), crate::Error> {
                let predicted = comparator.compare(&owned[i], &owned[j])?.top_level();
                let truth = classify_level(quality_difference(&owned[i], &owned[j])?);
                Ok((predicted, truth))
            })?;
        let (pred, truth): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
        Some(level_accuracy(&pred, &truth)?)
    } else {
        None
    };

    let report = MetricReport {
        split_id,
        n_items: test.len(),
        srcc: srcc(&scores, &mos)?,
        plcc: plcc(&scores, &mos, cfg.logistic_plcc)?,
        accuracy,
    };
    let scores = test
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoredImage { image_id: r.image_id.clone(), mos: r.mos, score })
        .collect();
    Ok(SplitOutcome { report, anchors: anchor_set.ids().map(str::to_string).collect(), scores })
}

pub fn summarize(reports: &[MetricReport]) -> MedianSummary {
    let col = |f: fn(&MetricReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let acc: Vec<f64> = reports.iter().filter_map(|r| r.accuracy).collect();
    MedianSummary { srcc: col(|r| r.srcc), plcc: col(|r| r.plcc), accuracy: median(&acc) }
}

/// Runs every split of an experiment over `records` and reports
/// element-wise medians. A failed split aborts the run.
pub fn run_experiment_on(
    records: &[ImageRecord],
    cfg: &ExperimentConfig,
    exec: Execution,
) -> Result<ExperimentReport, crate::Error> {
    cfg.validate()?;
    let split_ids: Vec<usize> = if cfg.split_file.is_some() { vec![0] } else { (0..cfg.splits).collect() };
    let comparators: Vec<Box<dyn Comparator>> = split_ids
        .iter()
        .map(|&k| cfg.comparator.reseeded(cfg.comparator.seed.wrapping_add(k as u64)).build())
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, &dyn Comparator)> =
        split_ids.iter().copied().zip(comparators.iter().map(|c| c.as_ref())).collect();
    let splits = par::try_map(exec, &jobs, |&(k, cmp)| {
        run_split(records, cfg, cmp, k, exec).map_err(|e| EvalError::Split { split: k, source: Box::new(e) })
    })?;
    let reports: Vec<MetricReport> = splits.iter().map(|s| s.report.clone()).collect();
    Ok(ExperimentReport { median: summarize(&reports), splits })
}

/// Loads the configured dataset and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport, crate::Error> {
    cfg.validate()?;
    let records = cfg.load_records()?;
    run_experiment_on(&records, cfg, exec)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("split,n_items,srcc,plcc,accuracy\n");
    for s in &report.splits {
        let r = &s.report;
        let _ = writeln!(out, "{},{},{:.6},{:.6},{}", r.split_id, r.n_items, r.srcc, r.plcc, fmt_opt(r.accuracy));
    }
    let m = &report.median;
    let _ = writeln!(out, "median,,{:.6},{:.6},{}", m.srcc, m.plcc, fmt_opt(m.accuracy));
    out
}

pub fn split_csv(outcome: &SplitOutcome) -> String {
    let mut out = String::from("image_id,mos,score\n");
    for s in &outcome.scores {
        let _ = writeln!(out, "{},{},{}", s.image_id, s.mos, s.score);
    }
    out
}

/// Plain-text table of per-split and median metrics.
pub fn summary_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8} {:>9}", "split", "n", "SRCC", "PLCC", "accuracy");
    for s in &report.splits {
        let r = &s.report;
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>8.3} {:>8.3} {:>9}",
            r.split_id,
            r.n_items,
            r.srcc,
            r.plcc,
            r.accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    let m = &report.median;
    let _ = writeln!(
        out,
        "{:>8} {:>8} {:>8.3} {:>8.3} {:>9}",
        "median",
        "",
        m.srcc,
        m.plcc,
        m.accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into())
    );
    out
}

/// Writes `split_<k>.csv` per split, `summary.csv`, and optionally
/// `summary.txt` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, report: &ExperimentReport, table: bool) -> std::io::Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for s in &report.splits {
        fs::write(dir.join(format!("split_{}.csv", s.report.split_id)), split_csv(s))?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(report))?;
    if table {
        fs::write(dir.join("summary.txt"), summary_table(report))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_cfg(splits: usize) -> ExperimentConfig {
        ExperimentConfig {
            synthetic: Some(SyntheticSpec { n: 120, seed: 3, ..SyntheticSpec::default() }),
            splits,
            accuracy_pairs: 200,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn ten_splits_and_median() {
        let report = run_experiment(&synthetic_cfg(10), Execution::Parallel).unwrap();
        assert_eq!(report.splits.len(), 10);
        let srccs: Vec<f64> = report.splits.iter().map(|s| s.report.srcc).collect();
        assert_eq!(report.median.srcc, median(&srccs).unwrap());
        assert!(report.splits.iter().enumerate().all(|(k, s)| s.report.split_id == k && s.anchors.len() == 5));
    }

    #[test]
    fn single_split_median_is_identity() {
        let report = run_experiment(&synthetic_cfg(1), Execution::Sequential).unwrap();
        let r = &report.splits[0].report;
        assert_eq!((report.median.srcc, report.median.plcc, report.median.accuracy), (r.srcc, r.plcc, r.accuracy));
    }

    #[test]
    fn deterministic_end_to_end() {
        let cfg = synthetic_cfg(3);
        let a = run_experiment(&cfg, Execution::Parallel).unwrap();
        let b = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(summary_csv(&a), summary_csv(&b));
    }

    #[test]
    fn config_from_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            dataset = "koniq.csv"
            alpha = 4
            splits = 2
            matrix = "count"
            anchors = "random"

            [comparator]
            backend = "oracle"
            oracle_mode = "stochastic"
            noise_scale = 0.5

            [solver]
            prior = "none"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.alpha, 4);
        assert_eq!(cfg.beta, 1);
        assert_eq!(cfg.matrix, MatrixKind::Count);
        assert_eq!(cfg.anchors, AnchorSource::Random);
        assert_eq!(cfg.solver.prior, crate::scaling::Prior::None);
        assert_eq!(cfg.solver.max_iter, 500);
        assert!(ExperimentConfig::from_toml("alpah = 3").is_err());
        assert!(ExperimentConfig { alpha: 1, beta: 1, ..synthetic_cfg(1) }.validate().is_err());
    }

    #[test]
    fn failed_split_is_identified() {
        let cfg = ExperimentConfig {
            synthetic: Some(SyntheticSpec { n: 12, seed: 1, ..SyntheticSpec::default() }),
            alpha: 5,
            beta: 3,
            splits: 2,
            ..ExperimentConfig::default()
        };
        match run_experiment(&cfg, Execution::Sequential) {
            Err(crate::Error::Eval(EvalError::Split { split: 0, .. })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_files() {
        let report = run_experiment(&synthetic_cfg(2), Execution::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), &report, true).unwrap();
        for f in ["split_0.csv", "split_1.csv", "summary.csv", "summary.txt"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 4);
        assert!(summary.lines().last().unwrap().starts_with("median,"));
    }
}
