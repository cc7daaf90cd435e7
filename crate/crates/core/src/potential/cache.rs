use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::ArrayView2;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{ScoreSource, SeverityScore};
use crate::error::Result;

/// Canonical key: shape, then values rounded to 4 decimals, `,` within a row and `;` between rows.
pub fn cache_key(window: ArrayView2<'_, f64>) -> String {
    let rows: Vec<String> = window
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .map(|v| {
                    let s = format!("{v:.4}");
                    if s == "-0.0000" {
                        "0.0000".to_string()
                    } else {
                        s
                    }
                })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    format!("{}x{}|{}", window.nrows(), window.ncols(), rows.join(";"))
}

/// One line of the persisted cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub value: f64,
    pub source: ScoreSource,
}

/// Thread-safe severity cache with hit/miss counters.
#[derive(Debug, Default)]
pub struct PotentialCache {
    map: RwLock<HashMap<String, SeverityScore>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl PotentialCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<SeverityScore> {
        let found = self.map.read().get(key).copied();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn insert(&self, key: String, score: SeverityScore) {
        self.map.write().insert(key, score);
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Reads a JSON-lines cache; a missing file gives an empty cache.
    pub fn load(path: &Path) -> Result<Self> {
        let cache = Self::new();
        if !path.exists() {
            return Ok(cache);
        }
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)?;
            cache.insert(rec.key, SeverityScore::new(rec.value, rec.source));
        }
        Ok(cache)
    }

    /// Writes all entries sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.map.read();
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut w = BufWriter::new(fs::File::create(path)?);
        for k in keys {
            let s = map[k];
            let rec = CacheRecord { key: k.clone(), value: s.value, source: s.source };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn key_quantizes_to_four_decimals() {
        let a = array![[0.12341, 1.0], [-0.00001, 2.0]];
        let b = array![[0.12344, 1.0], [0.0, 2.0]];
        assert_eq!(cache_key(a.view()), cache_key(b.view()));
        assert_eq!(cache_key(a.view()), "2x2|0.1234,1.0000;0.0000,2.0000");
        let c = array![[0.1236, 1.0], [0.0, 2.0]];
        assert_ne!(cache_key(a.view()), cache_key(c.view()));
        // same values, different shape
        let flat = array![[0.1234, 1.0, 0.0, 2.0]];
        assert_ne!(cache_key(flat.view()), cache_key(b.view()));
    }

    #[test]
    fn counters_and_persistence() {
        let cache = PotentialCache::new();
        assert!(cache.get("k").is_none());
        cache.insert("k".into(), SeverityScore { value: 0.3, source: ScoreSource::Llm });
        cache.insert("a".into(), SeverityScore { value: 0.9, source: ScoreSource::Fallback });
        assert_eq!(cache.get("k").unwrap().value, 0.3);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        cache.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "{\"key\":\"a\",\"value\":0.9,\"source\":\"fallback\"}\n{\"key\":\"k\",\"value\":0.3,\"source\":\"llm\"}\n"
        );
        let back = PotentialCache::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("a").unwrap().value, 0.9);
        assert!(PotentialCache::load(&dir.path().join("none")).unwrap().is_empty());
    }
}
