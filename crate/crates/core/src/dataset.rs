//! Dataset metadata ingest and content-independent splitting.
//!
//! Metadata files are UTF-8 CSV with the header `image_id,mos,std,ref_group`.
//! One file holds one dataset; the dataset tag comes from the caller or the
//! file stem. MOS values are kept on their native scale.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER: [&str; 4] = ["image_id", "mos", "std", "ref_group"];

/// Default train/val/test proportions.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("negative std at row {row}")]
    NegativeStd { row: u64 },
    #[error("duplicate image_id `{id}` at row {row}")]
    DuplicateId { row: u64, id: String },
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    InvalidRatios((f64, f64, f64)),
    #[error("record `{0}` has no ref_group but grouping by reference was requested")]
    MissingRefGroup(String),
    #[error("insufficient groups: need at least 3, found {0}")]
    InsufficientGroups(usize),
    #[error("split file: {0}")]
    SplitFile(String),
}

/// One annotated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub mos: f64,
    pub std: f64,
    pub ref_group: Option<String>,
    pub dataset: String,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, mos: f64, std: f64, dataset: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), mos, std, ref_group: None, dataset: dataset.into() }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.ref_group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Csv,
}

/// Train/validation/test partition of one dataset's image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Train and validation ids merged, which is what anchor selection sees.
    pub fn train_val(&self) -> Vec<String> {
        self.train.iter().chain(&self.val).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loads a dataset file, tagging records with the file stem.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<ImageRecord>, DatasetError> {
    let path = path.as_ref();
    let tag = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    load_dataset_as(path, format, &tag)
}

/// Loads a dataset file with an explicit dataset tag.
pub fn load_dataset_as(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    tag: &str,
) -> Result<Vec<ImageRecord>, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    match format {
        DatasetFormat::Csv => read_records(file, tag),
    }
}

/// Parses dataset CSV from any reader.
pub fn read_records<R: Read>(reader: R, tag: &str) -> Result<Vec<ImageRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &'static str| headers.iter().position(|h| h == name);
    let id_col = column("image_id").ok_or(DatasetError::MissingColumn("image_id"))?;
    let mos_col = column("mos").ok_or(DatasetError::MissingColumn("mos"))?;
    let std_col = column("std").ok_or(DatasetError::MissingColumn("std"))?;
    let group_col = column("ref_group");

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |col: usize| row.get(col).unwrap_or("");
        let number = |col: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = field(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DatasetError::Row { row: line, message: format!("non-numeric {name} `{raw}`") }),
            }
        };
        let image_id = field(id_col).to_string();
        if image_id.is_empty() {
            return Err(DatasetError::Row { row: line, message: "empty image_id".into() });
        }
        let mos = number(mos_col, "mos")?;
        let std = number(std_col, "std")?;
        if std < 0.0 {
            return Err(DatasetError::NegativeStd { row: line });
        }
        if !seen.insert(image_id.clone()) {
            return Err(DatasetError::DuplicateId { row: line, id: image_id });
        }
        let ref_group = group_col.map(field).filter(|g| !g.is_empty()).map(str::to_string);
        records.push(ImageRecord { image_id, mos, std, ref_group, dataset: tag.to_string() });
    }
    Ok(records)
}

/// Writes records in the canonical CSV layout.
pub fn write_records<W: Write>(writer: W, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    wtr.write_record(HEADER)?;
    for r in records {
        wtr.write_record([
            r.image_id.as_str(),
            &r.mos.to_string(),
            &r.std.to_string(),
            r.ref_group.as_deref().unwrap_or(""),
        ])?;
    }
    wtr.flush().map_err(|source| DatasetError::Io { path: "<writer>".into(), source })?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    write_records(file, records)
}

/// Splits records into train/val/test.
///
/// Randomisation happens at group granularity: one group per `ref_group`
/// when `group_by_ref` is set, otherwise one group per image. Group counts
/// per split come from largest-remainder rounding of `ratios`; fractional
/// ties go to the earlier split.
pub fn split_dataset(
    records: &[ImageRecord],
    ratios: (f64, f64, f64),
    seed: u64,
    group_by_ref: bool,
) -> Result<SplitAssignment, DatasetError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }

    // BTreeMap keeps group order independent of record order.
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = if group_by_ref {
            r.ref_group.as_deref().ok_or_else(|| DatasetError::MissingRefGroup(r.image_id.clone()))?
        } else {
            r.image_id.as_str()
        };
        groups.entry(key).or_default().push(i);
    }
    if groups.len() < 3 {
        return Err(DatasetError::InsufficientGroups(groups.len()));
    }

    let mut keys: Vec<&str> = groups.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);

    let counts = largest_remainder(keys.len(), &[a, b, c]);
    let mut split_of = HashMap::new();
    for (pos, key) in keys.iter().enumerate() {
        let which = if pos < counts[0] {
            0
        } else if pos < counts[0] + counts[1] {
            1
        } else {
            2
        };
        split_of.insert(*key, which);
    }

    let mut out = SplitAssignment { train: Vec::new(), val: Vec::new(), test: Vec::new(), seed };
    for r in records {
        let key = if group_by_ref { r.ref_group.as_deref().unwrap_or_default() } else { r.image_id.as_str() };
        let bucket = match split_of[key] {
            0 => &mut out.train,
            1 => &mut out.val,
            _ => &mut out.test,
        };
        bucket.push(r.image_id.clone());
    }
    Ok(out)
}

/// Apportions `total` items by `weights` (summing to 1) with the
/// largest-remainder rule.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // Stable sort keeps earlier entries first on equal remainders.
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Reads an explicit split file (`image_id,split` with split in
/// `train|val|test`) and checks that it partitions `records`.
pub fn load_split_file(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<SplitAssignment, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let known: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let mut out = SplitAssignment { train: Vec::new(), val: Vec::new(), test: Vec::new(), seed: 0 };
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(0).unwrap_or("").to_string();
        if !known.contains(id.as_str()) {
            return Err(DatasetError::SplitFile(format!("row {line}: unknown image_id `{id}`")));
        }
        if !seen.insert(id.clone()) {
            return Err(DatasetError::SplitFile(format!("row {line}: `{id}` listed twice")));
        }
        match row.get(1).unwrap_or("") {
            "train" => out.train.push(id),
            "val" => out.val.push(id),
            "test" => out.test.push(id),
            other => return Err(DatasetError::SplitFile(format!("row {line}: unknown split `{other}`"))),
        }
    }
    if seen.len() != known.len() {
        return Err(DatasetError::SplitFile(format!(
            "{} of {} images are not assigned to a split",
            known.len() - seen.len(),
            known.len()
        )));
    }
    Ok(out)
}
