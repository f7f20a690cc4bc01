//! Precomputed logits keyed by ordered image-id pair.
//!
//! File format: JSON Lines, one `{"first": .., "second": .., "logits": [5]}`
//! object per line. Blank lines are skipped.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Comparator, ComparatorError, ComparisonLogits};
use crate::dataset::ImageRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub first: String,
    pub second: String,
    pub logits: ComparisonLogits,
}

/// Read-only after construction. Pairs are never mirrored implicitly.
#[derive(Debug, Clone, Default)]
pub struct CacheComparator {
    entries: HashMap<(String, String), ComparisonLogits>,
}

impl CacheComparator {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ComparatorError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| ComparatorError::CacheLoad { line: 0, message: format!("{}: {e}", path.display()) })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ComparatorError> {
        let mut entries = HashMap::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| ComparatorError::CacheLoad { line: line_no, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line)
                .map_err(|e| ComparatorError::CacheLoad { line: line_no, message: e.to_string() })?;
            let key = (entry.first, entry.second);
            if entries.contains_key(&key) {
                return Err(ComparatorError::CacheLoad {
                    line: line_no,
                    message: format!("duplicate pair ({}, {})", key.0, key.1),
                });
            }
            entries.insert(key, entry.logits);
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CacheEntry>) -> Self {
        Self { entries: entries.into_iter().map(|e| ((e.first, e.second), e.logits)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cache_compare(&self, first: &str, second: &str) -> Result<ComparisonLogits, ComparatorError> {
        self.entries
            .get(&(first.to_string(), second.to_string()))
            .copied()
            .ok_or_else(|| ComparatorError::CacheMiss { first: first.to_string(), second: second.to_string() })
    }
}

impl Comparator for CacheComparator {
    fn compare(&self, first: &ImageRecord, second: &ImageRecord) -> Result<ComparisonLogits, ComparatorError> {
        self.cache_compare(&first.image_id, &second.image_id)
    }
}

/// Appends one cache line.
pub fn write_cache_line<W: Write>(mut w: W, entry: &CacheEntry) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, entry)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"{"first":"a","second":"b","logits":[0.5,-1,2,0,1.25]}

{"first":"b","second":"c","logits":[0,0,0,0,0]}
"#;

    #[test]
    fn exact_lookup_without_mirroring() {
        let cache = CacheComparator::from_reader(FILE.as_bytes()).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.cache_compare("a", "b").unwrap().values(), &[0.5, -1.0, 2.0, 0.0, 1.25]);
        match cache.cache_compare("b", "a") {
            Err(ComparatorError::CacheMiss { first, second }) => {
                assert_eq!((first.as_str(), second.as_str()), ("b", "a"))
            }
            other => panic!("expected miss, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_fails_at_load() {
        let text = format!("{FILE}{}", r#"{"first":"a","second":"b","logits":[1,1,1,1,1]}"#);
        match CacheComparator::from_reader(text.as_bytes()) {
            Err(ComparatorError::CacheLoad { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(CacheComparator::from_reader(&br#"{"first":"a","second":"b","logits":[1,1]}"#[..]).is_err());
        assert!(CacheComparator::from_reader(&b"not json"[..]).is_err());
    }

    #[test]
    fn written_lines_load_back() {
        let entry = CacheEntry {
            first: "x".into(),
            second: "y".into(),
            logits: ComparisonLogits::new([0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(),
        };
        let mut buf = Vec::new();
        write_cache_line(&mut buf, &entry).unwrap();
        let cache = CacheComparator::from_reader(buf.as_slice()).unwrap();
        assert_eq!(cache.cache_compare("x", "y").unwrap(), entry.logits);
    }
}
