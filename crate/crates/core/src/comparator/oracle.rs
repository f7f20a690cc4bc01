//! Analytic comparator driven by ground-truth opinion scores.
//!
//! The oracle compares two records through the standardised quality
//! difference `z = (mos₁ - mos₂) / √(σ₁² + σ₂²)`. In deterministic mode the
//! logits are the log band masses of `N(z, 1)` over the same ±1/±2 bands used
//! for corpus labels, so its softmax is exactly the distribution the
//! stochastic mode samples from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Comparator, ComparatorError, ComparisonLogits};
use crate::corpus::{classify_level, quality_difference, QualityDifference};
use crate::dataset::ImageRecord;
use crate::scaling::normal::norm_cdf;

/// Floor applied to band masses before taking logs.
pub const MASS_FLOOR: f64 = 1e-12;

/// Logit assigned to the levels that were not sampled.
pub const ONE_HOT_LOW: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    #[default]
    Deterministic,
    Stochastic,
}

impl std::str::FromStr for OracleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "stochastic" => Ok(Self::Stochastic),
            _ => Err(format!("unknown oracle mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparator {
    pub mode: OracleMode,
    pub noise_scale: f64,
    pub seed: u64,
}

impl OracleComparator {
    pub fn new(mode: OracleMode, noise_scale: f64, seed: u64) -> Self {
        Self { mode, noise_scale, seed }
    }

    pub fn deterministic() -> Self {
        Self::new(OracleMode::Deterministic, 0.0, 0)
    }
}

impl Comparator for OracleComparator {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError> {
        oracle_compare(first, second, self.mode, self.noise_scale, self.seed)
    }
}

/// P(a < u <= b) for u ~ N(0, 1), evaluated on the side with less
/// cancellation.
fn band_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        norm_cdf(-a) - norm_cdf(-b)
    } else {
        norm_cdf(b) - norm_cdf(a)
    }
}

/// Level probabilities of `N(z, 1)` over the comparative bands, ordered
/// inferior → superior.
pub fn band_masses(z: f64) -> [f64; 5] {
    [
        norm_cdf(z - 2.0),
        band_mass(1.0 - z, 2.0 - z),
        band_mass(-1.0 - z, 1.0 - z),
        band_mass(-2.0 - z, -1.0 - z),
        norm_cdf(-2.0 - z),
    ]
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Per-pair RNG seed. Stable across runs and platforms.
fn pair_seed(seed: u64, first: &str, second: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for part in [first, second] {
        h = (h ^ fnv1a(part.as_bytes())).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

pub fn oracle_compare(
    first: &ImageRecord,
    second: &ImageRecord,
    mode: OracleMode,
    noise_scale: f64,
    seed: u64,
) -> Result<ComparisonLogits, ComparatorError> {
    let diff = quality_difference(first, second)?;
    let values = match mode {
        OracleMode::Deterministic => band_masses(diff.z()).map(|m| m.max(MASS_FLOOR).ln()),
        OracleMode::Stochastic => {
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(seed, &first.image_id, &second.image_id));
            let sampled = Normal::new(diff.mean_diff, diff.std_diff)
                .map_err(|e| ComparatorError::InvalidLogits(e.to_string()))?
                .sample(&mut rng);
            let level = classify_level(QualityDifference { mean_diff: sampled, std_diff: diff.std_diff });
            let mut v = [ONE_HOT_LOW; 5];
            v[level.ordinal()] = 0.0;
            if noise_scale > 0.0 {
                let noise = Normal::new(0.0, noise_scale).map_err(|e| ComparatorError::InvalidLogits(e.to_string()))?;
                v.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            }
            v
        }
    };
    ComparisonLogits::new(values)
}
