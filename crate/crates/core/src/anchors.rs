//! Quality intervals and anchor selection.
//!
//! The MOS range of a training set is cut into `alpha` equal-width
//! intervals; from each interval the `beta` images with the smallest rating
//! variance become anchors. Because the objective is a sum of per-image
//! variances, picking the `beta` smallest std values is the exact optimum.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageRecord;

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("alpha and beta must be at least 1")]
    InvalidParameters,
    #[error("no records to partition")]
    Empty,
    #[error("degenerate MOS range: all records share one MOS but alpha = {0}")]
    DegenerateRange(usize),
    #[error("interval {interval} holds {found} records, fewer than beta = {needed}")]
    Underpopulated { interval: usize, found: usize, needed: usize },
    #[error("anchor file: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub image_id: String,
    pub interval: usize,
}

/// Ordered anchor list, sorted by `(interval, image_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
    pub alpha: usize,
    pub beta: usize,
    pub dataset: String,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.anchors.iter().map(|a| a.image_id.as_str())
    }

    /// Looks up anchor records by id.
    pub fn resolve<'a>(&self, records: &'a [ImageRecord]) -> Result<Vec<&'a ImageRecord>, AnchorError> {
        let by_id: HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
        self.ids()
            .map(|id| by_id.get(id).copied().ok_or_else(|| AnchorError::Format(format!("unknown anchor `{id}`"))))
            .collect()
    }

    /// Writes `image_id,interval_index` CSV preceded by a `#` comment line
    /// recording alpha, beta and the source dataset.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), AnchorError> {
        writeln!(w, "# alpha={} beta={} dataset={}", self.alpha, self.beta, self.dataset)?;
        writeln!(w, "image_id,interval_index")?;
        for a in &self.anchors {
            writeln!(w, "{},{}", a.image_id, a.interval)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnchorError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, AnchorError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let comment = lines.next().ok_or_else(|| AnchorError::Format("empty file".into()))?;
        let meta: HashMap<&str, &str> = comment
            .strip_prefix('#')
            .ok_or_else(|| AnchorError::Format("missing `# alpha=.. beta=.. dataset=..` comment".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let number = |key: &str| -> Result<usize, AnchorError> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| AnchorError::Format(format!("missing or invalid `{key}` in header comment")))
        };
        let (alpha, beta) = (number("alpha")?, number("beta")?);
        let dataset = meta.get("dataset").copied().unwrap_or_default().to_string();
        if lines.next().map(str::trim) != Some("image_id,interval_index") {
            return Err(AnchorError::Format("expected header `image_id,interval_index`".into()));
        }
        let mut anchors = Vec::new();
        for line in lines {
            let (id, interval) =
                line.split_once(',').ok_or_else(|| AnchorError::Format(format!("malformed line `{line}`")))?;
            let interval =
                interval.trim().parse().map_err(|_| AnchorError::Format(format!("bad interval in `{line}`")))?;
            anchors.push(Anchor { image_id: id.trim().to_string(), interval });
        }
        Ok(Self { anchors, alpha, beta, dataset })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnchorError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Equal-width interval boundaries over the observed MOS range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intervals {
    pub min: f64,
    pub max: f64,
    pub alpha: usize,
}

impl Intervals {
    pub fn fit(records: &[ImageRecord], alpha: usize) -> Result<Self, AnchorError> {
        if alpha == 0 {
            return Err(AnchorError::InvalidParameters);
        }
        if records.is_empty() {
            return Err(AnchorError::Empty);
        }
        let min = records.iter().map(|r| r.mos).fold(f64::INFINITY, f64::min);
        let max = records.iter().map(|r| r.mos).fold(f64::NEG_INFINITY, f64::max);
        if alpha > 1 && min == max {
            return Err(AnchorError::DegenerateRange(alpha));
        }
        Ok(Self { min, max, alpha })
    }

    pub fn boundary(&self, k: usize) -> f64 {
        if k == self.alpha {
            self.max
        } else {
            self.min + (self.max - self.min) * k as f64 / self.alpha as f64
        }
    }

    /// Interval of `mos`: left-closed, right-open, except the last which
    /// also takes the maximum.
    pub fn index_of(&self, mos: f64) -> usize {
        (1..self.alpha).take_while(|&k| mos >= self.boundary(k)).count()
    }
}

pub fn partition_intervals(records: &[ImageRecord], alpha: usize) -> Result<Vec<usize>, AnchorError> {
    let iv = Intervals::fit(records, alpha)?;
    Ok(records.iter().map(|r| iv.index_of(r.mos)).collect())
}

/// Members of each interval, sorted by image id.
fn members(records: &[ImageRecord], alpha: usize, beta: usize) -> Result<Vec<Vec<&ImageRecord>>, AnchorError> {
    if beta == 0 {
        return Err(AnchorError::InvalidParameters);
    }
    let idx = partition_intervals(records, alpha)?;
    let mut out = vec![Vec::new(); alpha];
    for (r, k) in records.iter().zip(idx) {
        out[k].push(r);
    }
    for (interval, group) in out.iter_mut().enumerate() {
        if group.len() < beta {
            return Err(AnchorError::Underpopulated { interval, found: group.len(), needed: beta });
        }
        group.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    }
    Ok(out)
}

fn assemble(picked: Vec<(usize, &ImageRecord)>, alpha: usize, beta: usize, records: &[ImageRecord]) -> AnchorSet {
    let mut anchors: Vec<Anchor> =
        picked.into_iter().map(|(interval, r)| Anchor { image_id: r.image_id.clone(), interval }).collect();
    anchors.sort_by(|a, b| (a.interval, &a.image_id).cmp(&(b.interval, &b.image_id)));
    let dataset = records.first().map(|r| r.dataset.clone()).unwrap_or_default();
    AnchorSet { anchors, alpha, beta, dataset }
}

/// Minimum-variance anchors: the `beta` smallest-std records per interval,
/// ties broken by image id.
pub fn select_anchors(records: &[ImageRecord], alpha: usize, beta: usize) -> Result<AnchorSet, AnchorError> {
    let groups = members(records, alpha, beta)?;
    let mut picked = Vec::with_capacity(alpha * beta);
    for (interval, mut group) in groups.into_iter().enumerate() {
        // Stable sort over id-sorted members keeps the id tie-break.
        group.sort_by(|a, b| a.std.total_cmp(&b.std));
        picked.extend(group.into_iter().take(beta).map(|r| (interval, r)));
    }
    Ok(assemble(picked, alpha, beta, records))
}

/// Uniformly random anchors per interval; the baseline for the variance rule.
pub fn select_anchors_random(
    records: &[ImageRecord],
    alpha: usize,
    beta: usize,
    seed: u64,
) -> Result<AnchorSet, AnchorError> {
    let groups = members(records, alpha, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(alpha * beta);
    for (interval, group) in groups.into_iter().enumerate() {
        picked.extend(index::sample(&mut rng, group.len(), beta).into_iter().map(|i| (interval, group[i])));
    }
    Ok(assemble(picked, alpha, beta, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(id: &str, mos: f64, std: f64) -> ImageRecord {
        ImageRecord::new(id, mos, std, "d")
    }

    #[test]
    fn five_unit_intervals() {
        let recs: Vec<_> = [0.0, 0.5, 1.0, 2.0, 2.99, 4.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| rec(&i.to_string(), m, 0.1))
            .collect();
        let iv = Intervals::fit(&recs, 5).unwrap();
        let bounds: Vec<f64> = (0..=5).map(|k| iv.boundary(k)).collect();
        assert_eq!(bounds, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(partition_intervals(&recs, 5).unwrap(), vec![0, 0, 1, 2, 2, 4, 4]);
        assert_eq!(partition_intervals(&recs, 1).unwrap(), vec![0; 7]);
    }

    #[test]
    fn degenerate_range() {
        let recs = vec![rec("a", 3.0, 0.1), rec("b", 3.0, 0.2)];
        assert!(matches!(partition_intervals(&recs, 2), Err(AnchorError::DegenerateRange(2))));
        assert_eq!(partition_intervals(&recs, 1).unwrap(), vec![0, 0]);
    }

    #[test]
    fn minimum_std_wins() {
        let recs = vec![rec("a", 1.0, 0.5), rec("b", 1.5, 0.2), rec("c", 2.0, 0.3)];
        let set = select_anchors(&recs, 1, 1).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), ["b"]);
        let set = select_anchors(&recs, 1, 3).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
        let random = select_anchors_random(&recs, 1, 3, 99).unwrap();
        assert_eq!(random, set);
    }

    #[test]
    fn ties_break_by_id() {
        let recs = vec![rec("z", 1.0, 0.2), rec("m", 1.5, 0.2), rec("q", 2.0, 0.2)];
        assert_eq!(select_anchors(&recs, 1, 1).unwrap().ids().collect::<Vec<_>>(), ["m"]);
    }

    #[test]
    fn underpopulated_interval_is_named() {
        let recs = vec![rec("a", 0.0, 0.1), rec("b", 0.1, 0.1), rec("c", 5.0, 0.1)];
        match select_anchors(&recs, 5, 1) {
            Err(AnchorError::Underpopulated { interval: 1, found: 0, needed: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn synthetic(n: usize, seed: u64) -> Vec<ImageRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| rec(&format!("img_{i:03}"), rng.gen_range(0.0..5.0), rng.gen_range(0.05..1.0))).collect()
    }

    #[test]
    fn random_anchors_one_per_interval() {
        let recs = synthetic(200, 4);
        let set = select_anchors_random(&recs, 5, 1, 8).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set, select_anchors_random(&recs, 5, 1, 8).unwrap());
        let iv = Intervals::fit(&recs, 5).unwrap();
        for (k, r) in set.resolve(&recs).unwrap().iter().enumerate() {
            assert_eq!(iv.index_of(r.mos), k);
            assert_eq!(set.anchors[k].interval, k);
        }
    }

    #[test]
    fn file_round_trip() {
        let set = select_anchors(&synthetic(50, 1), 5, 2).unwrap();
        let mut buf = Vec::new();
        set.write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# alpha=5 beta=2 dataset=d\nimage_id,interval_index\n"));
        let mut parsed = AnchorSet::parse(&text).unwrap();
        parsed.dataset = set.dataset.clone();
        assert_eq!(parsed, set);
        assert!(AnchorSet::parse("image_id,interval_index\n").is_err());
    }

    proptest! {
        #[test]
        fn selection_is_order_independent(seed: u64, shuffle_seed: u64) {
            use rand::seq::SliceRandom;
            let recs = synthetic(60, seed);
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            prop_assert_eq!(select_anchors(&recs, 3, 2).unwrap(), select_anchors(&shuffled, 3, 2).unwrap());
            prop_assert_eq!(
                select_anchors_random(&recs, 3, 2, 5).unwrap(),
                select_anchors_random(&shuffled, 3, 2, 5).unwrap()
            );
        }

        #[test]
        fn no_unselected_record_beats_an_anchor(seed: u64) {
            let recs = synthetic(80, seed);
            let set = select_anchors(&recs, 4, 3).unwrap();
            let idx = partition_intervals(&recs, 4).unwrap();
            for k in 0..4 {
                let chosen: Vec<&ImageRecord> = set.resolve(&recs).unwrap().into_iter().filter(|r| idx[recs.iter().position(|x| x.image_id == r.image_id).unwrap()] == k).collect();
                prop_assert_eq!(chosen.len(), 3);
                let worst = chosen.iter().map(|r| r.std).fold(f64::NEG_INFINITY, f64::max);
                for (r, &i) in recs.iter().zip(&idx) {
                    if i == k && !chosen.iter().any(|c| c.image_id == r.image_id) {
                        prop_assert!(r.std >= worst);
                    }
                }
            }
        }
    }
}
