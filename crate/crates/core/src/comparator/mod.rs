//! Pairwise comparison contract and its backends.
//!
//! A comparator answers "how is the quality of the second image compared
//! with the first?" with five logits ordered inferior → superior. Logit
//! semantics are fixed: `superior` means the second image is much better.

mod cache;
mod oracle;
mod remote;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ComparativeLevel, CorpusError};
use crate::dataset::ImageRecord;

pub use cache::{write_cache_line, CacheComparator, CacheEntry};
pub use oracle::{oracle_compare, OracleComparator, OracleMode, MASS_FLOOR, ONE_HOT_LOW};
pub use remote::{CompareRequest, CompareResponse, RemoteComparator, RemoteOptions};

#[derive(Debug, Error)]
pub enum ComparatorError {
    #[error("cannot resolve image reference `{0}`")]
    Unresolvable(String),
    #[error("cache miss for pair ({first}, {second})")]
    CacheMiss { first: String, second: String },
    #[error("logits cache line {line}: {message}")]
    CacheLoad { line: usize, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: usize },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("comparator service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid logits: {0}")]
    InvalidLogits(String),
    #[error("comparator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pair(#[from] CorpusError),
}

/// Five comparative-level logits, indexed by [`ComparativeLevel`] ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct ComparisonLogits([f64; 5]);

impl ComparisonLogits {
    pub fn new(values: [f64; 5]) -> Result<Self, ComparatorError> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ComparatorError::InvalidLogits(format!("non-finite value {v}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64; 5] {
        &self.0
    }

    pub fn get(&self, level: ComparativeLevel) -> f64 {
        self.0[level.ordinal()]
    }

    /// Softmax over the five levels.
    pub fn probabilities(&self) -> [f64; 5] {
        let max = self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = self.0.map(|v| (v - max).exp());
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }

    /// Highest-logit level; ties resolve to the lower ordinal.
    pub fn top_level(&self) -> ComparativeLevel {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        ComparativeLevel::ALL[best]
    }

    /// Logits read from the other side of the pair.
    pub fn reversed(&self) -> Self {
        let mut v = self.0;
        v.reverse();
        Self(v)
    }
}

impl TryFrom<[f64; 5]> for ComparisonLogits {
    type Error = ComparatorError;

    fn try_from(values: [f64; 5]) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ComparisonLogits> for [f64; 5] {
    fn from(l: ComparisonLogits) -> Self {
        l.0
    }
}

/// The comparison contract. Implementations must be safe to call
/// concurrently.
pub trait Comparator: Send + Sync {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError>;
}

impl<C: Comparator + ?Sized> Comparator for &C {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError> {
        (**self).compare(first, second)
    }
}

impl<C: Comparator + ?Sized> Comparator for Box<C> {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError> {
        (**self).compare(first, second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Oracle,
    Cache,
    Remote,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "cache" => Ok(Self::Cache),
            "remote" => Ok(Self::Remote),
            _ => Err(format!("unknown comparator `{s}` (expected oracle, cache or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparatorConfig {
    pub backend: Backend,
    pub oracle_mode: OracleMode,
    pub noise_scale: f64,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub cache_path: Option<PathBuf>,
    /// Directory the remote backend resolves image ids against.
    pub image_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Oracle,
            oracle_mode: OracleMode::Deterministic,
            noise_scale: 0.0,
            seed: 0,
            endpoint: None,
            cache_path: None,
            image_dir: None,
            max_in_flight: 4,
            timeout_secs: 30.0,
        }
    }
}

impl ComparatorConfig {
    pub fn oracle(mode: OracleMode, noise_scale: f64, seed: u64) -> Self {
        Self { oracle_mode: mode, noise_scale, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ComparatorError> {
        let err = |m: &str| Err(ComparatorError::Config(m.to_string()));
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return err("noise_scale must be a finite value >= 0");
        }
        match (self.backend, self.endpoint.is_some(), self.cache_path.is_some()) {
            (Backend::Remote, false, _) => err("remote backend requires an endpoint"),
            (Backend::Remote, _, true) => err("cache_path is only valid for the cache backend"),
            (Backend::Cache, _, false) => err("cache backend requires a cache path"),
            (Backend::Cache, true, _) => err("endpoint is only valid for the remote backend"),
            (Backend::Oracle, true, _) | (Backend::Oracle, _, true) => {
                err("oracle backend takes neither an endpoint nor a cache path")
            }
            _ => Ok(()),
        }
    }

    /// Same configuration with a different oracle seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn build(&self) -> Result<Box<dyn Comparator>, ComparatorError> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Oracle => Box::new(OracleComparator::new(self.oracle_mode, self.noise_scale, self.seed)),
            Backend::Cache => Box::new(CacheComparator::load(self.cache_path.as_ref().expect("validated"))?),
            Backend::Remote => {
                let opts = RemoteOptions {
                    image_dir: self.image_dir.clone(),
                    max_in_flight: self.max_in_flight.max(1),
                    timeout: Duration::from_secs_f64(self.timeout_secs),
                    ..RemoteOptions::default()
                };
                Box::new(RemoteComparator::new(self.endpoint.as_deref().expect("validated"), opts))
            }
        })
    }
}
