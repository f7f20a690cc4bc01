//! `pairscale` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for runtime
//! failures. Data goes to files or stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::anchors::{self, AnchorError, AnchorSet};
use crate::comparator::{Backend, ComparatorConfig, ComparatorError, OracleMode};
use crate::corpus::{allocate_pairs, build_corpus, emit_corpus, write_corpus, CorpusError};
use crate::dataset::{self, DatasetError, DatasetFormat, ImageRecord};
use crate::eval::{self, AnchorSource, EvalError, ExperimentConfig};
use crate::par::{self, Execution};
use crate::scaling::{
    self, AnchorScorer, CountMatrix, MatrixKind, PreferenceMatrix, Prior, ScalingError, SolverConfig,
};
use crate::synth::SyntheticSpec;
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "pairscale", version, about = "Pairwise-comparison quality scaling")]
struct Cli {
    /// Worker threads for parallel scoring (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample labelled image pairs into a JSONL instruction corpus.
    GenCorpus(GenCorpusArgs),
    /// Pick anchor images from a dataset.
    SelectAnchors(SelectAnchorsArgs),
    /// Score images against an anchor set.
    Score(ScoreArgs),
    /// Solve a preference or count matrix file.
    Solve(SolveArgs),
    /// Run the pipeline on a synthetic dataset with the oracle comparator.
    Simulate(SimulateArgs),
    /// Run a multi-split evaluation.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Dataset CSV; repeat for several datasets.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// Total pairs, split across datasets by size.
    #[arg(long)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    balance_levels: bool,
    /// Output JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectAnchorsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    alpha: usize,
    #[arg(long, default_value_t = 1)]
    beta: usize,
    /// Random anchors per interval instead of minimum variance.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ComparatorArgs {
    #[arg(long, default_value = "oracle")]
    comparator: Backend,
    /// Oracle flavour.
    #[arg(long, default_value = "deterministic")]
    comparator_mode: OracleMode,
    /// Logit noise scale of the stochastic oracle.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long, env = "PAIRSCALE_ENDPOINT")]
    endpoint: Option<String>,
    /// Directory remote image references resolve against.
    #[arg(long)]
    image_dir: Option<PathBuf>,
}

impl ComparatorArgs {
    fn config(&self, seed: u64) -> ComparatorConfig {
        // The env default must not leak into non-remote backends.
        let endpoint = if self.comparator == Backend::Remote { self.endpoint.clone() } else { None };
        ComparatorConfig {
            backend: self.comparator,
            oracle_mode: self.comparator_mode,
            noise_scale: self.noise,
            seed,
            endpoint,
            cache_path: self.cache.clone(),
            image_dir: self.image_dir.clone(),
            ..ComparatorConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long)]
    no_prior: bool,
    #[arg(long)]
    prior_weight: Option<f64>,
}

impl SolverArgs {
    fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if self.no_prior {
            cfg.prior = Prior::None;
        }
        if let Some(w) = self.prior_weight {
            cfg.prior_weight = w;
        }
        cfg
    }

    fn config(&self) -> SolverConfig {
        self.apply(SolverConfig::default())
    }
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Anchor file written by `select-anchors`.
    #[arg(long)]
    anchors: PathBuf,
    #[command(flatten)]
    comparator: ComparatorArgs,
    /// Image ids to score (default: every non-anchor image).
    #[arg(long = "image")]
    images: Vec<String>,
    #[arg(long)]
    symmetrize: bool,
    /// Use hard top-1 counts instead of soft probabilities.
    #[arg(long)]
    count: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Treat the input as a count matrix.
    #[arg(long)]
    count: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    comparator: ComparatorArgs,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<usize>,
    /// Random anchors instead of minimum variance.
    #[arg(long)]
    random: bool,
    #[arg(long)]
    symmetrize: bool,
    #[arg(long)]
    count: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    logistic_plcc: bool,
    #[arg(long)]
    accuracy_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn apply(&self, cfg: &mut ExperimentConfig, comparator_flags: bool) {
        if comparator_flags {
            cfg.comparator = self.comparator.config(cfg.seed);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.comparator.seed = s;
        }
        if let Some(k) = self.splits {
            cfg.splits = k;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if self.random {
            cfg.anchors = AnchorSource::Random;
        }
        if self.count {
            cfg.matrix = MatrixKind::Count;
        }
        cfg.symmetrize |= self.symmetrize;
        cfg.logistic_plcc |= self.logistic_plcc;
        if let Some(n) = self.accuracy_pairs {
            cfg.accuracy_pairs = n;
        }
        cfg.solver = self.solver.apply(cfg.solver);
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    /// Draw per-image std from [sigma, sigma-max].
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    mos_min: f64,
    #[arg(long, default_value_t = 5.0)]
    mos_max: f64,
    /// Use a dataset file instead of generating one.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    exp: ExperimentArgs,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if is_validation(&e) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}

failure_from!(DatasetError, AnchorError, ScalingError, ComparatorError, EvalError, CorpusError);

/// Bad inputs and configuration map to exit 1; anything that went wrong
/// while running maps to exit 2.
fn is_validation(e: &Error) -> bool {
    match e {
        Error::Dataset(d) => !matches!(d, DatasetError::Io { .. } | DatasetError::InsufficientGroups { .. }),
        Error::Comparator(ComparatorError::Config(_)) | Error::Comparator(ComparatorError::CacheLoad { .. }) => true,
        Error::Anchor(a) => !matches!(a, AnchorError::Io(_)),
        Error::Scaling(s) => {
            matches!(
                s,
                ScalingError::InvalidMatrix(_) | ScalingError::SizeMismatch { .. } | ScalingError::InvalidConfig(_)
            )
        }
        Error::Corpus(c) => matches!(c, CorpusError::CrossDataset { .. } | CorpusError::TooManyPairs { .. }),
        Error::Eval(EvalError::Config(_)) => true,
        Error::Eval(EvalError::Split { source, .. }) => is_validation(source),
        _ => false,
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    par::configure_workers(cli.jobs);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::SelectAnchors(a) => select(a),
        Command::Score(a) => score(a),
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

/// Writes to `out`, or stdout when none is given.
fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen_corpus(a: GenCorpusArgs) -> Result<(), Failure> {
    let sets: Vec<Vec<ImageRecord>> =
        a.datasets.iter().map(|p| dataset::load_dataset(p, DatasetFormat::Csv)).collect::<Result<_, _>>()?;
    let quotas = allocate_pairs(a.pairs, &sets.iter().map(Vec::len).collect::<Vec<_>>());
    let mut pairs = Vec::with_capacity(a.pairs);
    for (k, (records, quota)) in sets.iter().zip(quotas).enumerate() {
        pairs.extend(build_corpus(records, quota, a.seed.wrapping_add(k as u64), a.balance_levels)?);
    }
    let n = match &a.out {
        Some(p) => emit_corpus(&pairs, p)?,
        None => write_corpus(io::stdout().lock(), &pairs)?,
    };
    eprintln!("wrote {n} pairs");
    Ok(())
}

fn select(a: SelectAnchorsArgs) -> Result<(), Failure> {
    let records = dataset::load_dataset(&a.dataset, DatasetFormat::Csv)?;
    let set = if a.random {
        anchors::select_anchors_random(&records, a.alpha, a.beta, a.seed)?
    } else {
        anchors::select_anchors(&records, a.alpha, a.beta)?
    };
    let mut buf = Vec::new();
    set.write(&mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn score(a: ScoreArgs) -> Result<(), Failure> {
    let records = dataset::load_dataset(&a.dataset, DatasetFormat::Csv)?;
    let set = AnchorSet::load(&a.anchors)?;
    let anchor_records = set.resolve(&records)?;
    let targets: Vec<&ImageRecord> = if a.images.is_empty() {
        let ids: std::collections::HashSet<&str> = set.ids().collect();
        records.iter().filter(|r| !ids.contains(r.image_id.as_str())).collect()
    } else {
        a.images
            .iter()
            .map(|id| {
                records
                    .iter()
                    .find(|r| &r.image_id == id)
                    .ok_or_else(|| Failure::Usage(format!("unknown image id `{id}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let comparator = a.comparator.config(a.seed).build()?;
    let kind = if a.count { MatrixKind::Count } else { MatrixKind::Probability };
    let scorer = AnchorScorer::new(anchor_records, comparator, kind, a.solver.config(), a.symmetrize)?;
    let scores = scorer.score_all(&targets, Execution::Parallel)?;
    let mut text = String::from("image_id,score\n");
    for (r, s) in targets.iter().zip(scores) {
        text.push_str(&format!("{},{}\n", r.image_id, s));
    }
    emit(a.out.as_deref(), &text)
}

fn solve(a: SolveArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.matrix).map_err(|e| Failure::Runtime(format!("{}: {e}", a.matrix.display())))?;
    let rows = scaling::parse_matrix_csv(&text)?;
    let cfg = a.solver.config();
    let scores = if a.count {
        scaling::solve_map(&CountMatrix::from_rows(rows)?, &cfg)?
    } else {
        scaling::solve_map(&PreferenceMatrix::from_rows(rows)?, &cfg)?
    };
    let mut out = String::from("image_id,score\n");
    for (i, s) in scores.values().iter().enumerate() {
        out.push_str(&format!("{i},{s}\n"));
    }
    emit(a.out.as_deref(), &out)
}

fn finish(report: &eval::ExperimentReport, out: Option<&Path>) -> Result<(), Failure> {
    if let Some(dir) = out {
        eval::write_reports(dir, report, true)?;
    }
    print!("{}", eval::summary_table(report));
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::default();
    let seed = a.exp.seed.unwrap_or(0);
    match &a.dataset {
        Some(p) => cfg.dataset = Some(p.clone()),
        None => {
            cfg.synthetic = Some(SyntheticSpec {
                n: a.n,
                mos_min: a.mos_min,
                mos_max: a.mos_max,
                sigma: a.sigma,
                sigma_max: a.sigma_max,
                seed,
                ..SyntheticSpec::default()
            })
        }
    }
    if a.exp.comparator.comparator != Backend::Oracle {
        return Err(Failure::Usage("simulate drives the oracle comparator only".into()));
    }
    if !(a.sigma >= 0.0 && a.mos_max > a.mos_min) {
        return Err(Failure::Usage("need sigma >= 0 and mos-max > mos-min".into()));
    }
    a.exp.apply(&mut cfg, true);
    let report = eval::run_experiment(&cfg, Execution::Parallel)?;
    finish(&report, a.exp.out.as_deref())
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let (mut cfg, from_file) = match &a.config {
        Some(p) => (ExperimentConfig::load(p)?, true),
        None => (ExperimentConfig::default(), false),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
        cfg.synthetic = None;
    }
    // Comparator flags replace the file's comparator only when given
    // explicitly or when there is no file.
    let explicit = !from_file
        || a.exp.comparator.comparator != Backend::Oracle
        || a.exp.comparator.comparator_mode != OracleMode::Deterministic
        || a.exp.comparator.noise != 0.0;
    a.exp.apply(&mut cfg, explicit);
    let report = eval::run_experiment(&cfg, Execution::Parallel)?;
    finish(&report, a.exp.out.as_deref())
}
