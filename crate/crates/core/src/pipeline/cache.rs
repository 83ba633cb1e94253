//! Content-addressed store for stage outputs.
//!
//! Keys are hex SHA-256 digests of (operator, canonical params, input digest).
//! The disk backend keeps one file per key and an in-memory index rebuilt at
//! startup; both backends evict least-recently-used entries past a byte budget.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest as _, Sha256};

use crate::image::ImageBuffer;

pub const DEFAULT_BUDGET: u64 = 1 << 30;

const EXT: &str = "fsib";

#[derive(Debug, Clone)]
struct Entry {
    bytes: u64,
    dims: (usize, usize),
    tick: u64,
    /// Present for the memory backend only.
    value: Option<Arc<ImageBuffer>>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug)]
pub struct Cache {
    dir: Option<PathBuf>,
    budget: u64,
    index: Mutex<Index>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Default)]
struct Index {
    entries: HashMap<String, Entry>,
    bytes: u64,
    clock: u64,
}

impl Index {
    fn touch(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn remove(&mut self, key: &str) -> Option<Entry> {
        let e = self.entries.remove(key)?;
        self.bytes -= e.bytes;
        Some(e)
    }

    /// Drops LRU entries until the total fits; returns the evicted keys.
    fn evict(&mut self, budget: u64) -> Vec<String> {
        let mut out = Vec::new();
        if self.bytes <= budget {
            return out;
        }
        let mut order: Vec<(u64, String)> = self.entries.iter().map(|(k, e)| (e.tick, k.clone())).collect();
        order.sort();
        for (_, k) in order {
            if self.bytes <= budget {
                break;
            }
            self.remove(&k);
            out.push(k);
        }
        out
    }
}

pub fn cache_key(op: &str, canonical_params: &str, input_digest: &str) -> String {
    let mut h = Sha256::new();
    for part in [op, canonical_params, input_digest] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

fn image_bytes(img: &ImageBuffer) -> u64 {
    24 + 8 * img.len() as u64
}

impl Cache {
    pub fn memory(budget: u64) -> Self {
        Self {
            dir: None,
            budget,
            index: Mutex::new(Index::default()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens (creating if needed) a disk store and rebuilds the index from
    /// the files present, oldest modification first.
    pub fn open(dir: &Path, budget: u64) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut found = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXT) {
                // leftovers from interrupted writes
                if path.extension().and_then(|e| e.to_str()) == Some("tmp") {
                    let _ = fs::remove_file(&path);
                }
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let meta = fs::metadata(&path)?;
            match read_dims(&path) {
                Some(dims) => {
                    let mtime = meta.modified().ok();
                    found.push((mtime, key, meta.len(), dims));
                }
                None => {
                    let _ = fs::remove_file(&path);
                }
            }
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut index = Index::default();
        for (_, key, bytes, dims) in found {
            let tick = index.touch();
            index.bytes += bytes;
            index.entries.insert(
                key,
                Entry {
                    bytes,
                    dims,
                    tick,
                    value: None,
                },
            );
        }
        let cache = Self {
            dir: Some(dir.to_path_buf()),
            budget,
            index: Mutex::new(index),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        };
        let evicted = cache.index.lock().unwrap().evict(budget);
        cache.unlink(&evicted);
        Ok(cache)
    }

    pub fn is_persistent(&self) -> bool {
        self.dir.is_some()
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    fn path_of(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.{EXT}")))
    }

    fn unlink(&self, keys: &[String]) {
        for k in keys {
            if let Some(p) = self.path_of(k) {
                let _ = fs::remove_file(p);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<ImageBuffer> {
        let found = {
            let mut idx = self.index.lock().unwrap();
            let tick = idx.touch();
            idx.entries.get_mut(key).map(|e| {
                e.tick = tick;
                (e.dims, e.value.clone())
            })
        };
        let result = match found {
            None => None,
            Some((_, Some(v))) => Some((*v).clone()),
            Some((dims, None)) => {
                let loaded = self
                    .path_of(key)
                    .and_then(|p| fs::read(p).ok())
                    .and_then(|b| ImageBuffer::from_bytes(&b))
                    .filter(|img| img.dims() == dims);
                if loaded.is_none() {
                    log::warn!("cache entry {key} unreadable or inconsistent; dropping");
                    self.index.lock().unwrap().remove(key);
                    self.unlink(&[key.to_string()]);
                }
                loaded
            }
        };
        let counter = if result.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        result
    }

    /// Stores `img` under `key`. Concurrent writers of the same key write
    /// identical content; the last rename wins.
    pub fn put(&self, key: &str, img: &ImageBuffer) {
        let bytes = image_bytes(img);
        if bytes > self.budget {
            return;
        }
        let value = match &self.dir {
            None => Some(Arc::new(img.clone())),
            Some(dir) => {
                static SEQ: AtomicU64 = AtomicU64::new(0);
                let tmp = dir.join(format!(
                    "{key}.{}.{}.tmp",
                    std::process::id(),
                    SEQ.fetch_add(1, Ordering::Relaxed)
                ));
                let written = fs::write(&tmp, img.to_bytes()).and_then(|_| fs::rename(&tmp, self.path_of(key).unwrap()));
                if let Err(e) = written {
                    log::warn!("cache write for {key} failed: {e}");
                    let _ = fs::remove_file(&tmp);
                    return;
                }
                None
            }
        };
        let evicted = {
            let mut idx = self.index.lock().unwrap();
            let tick = idx.touch();
            idx.remove(key);
            idx.bytes += bytes;
            idx.entries.insert(
                key.to_string(),
                Entry {
                    bytes,
                    dims: img.dims(),
                    tick,
                    value,
                },
            );
            let mut ev = idx.evict(self.budget);
            // never evict what was just written
            ev.retain(|k| k != key);
            ev
        };
        self.unlink(&evicted);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.lock().unwrap().entries.contains_key(key)
    }

    pub fn stats(&self) -> CacheStats {
        let idx = self.index.lock().unwrap();
        CacheStats {
            entries: idx.entries.len(),
            bytes: idx.bytes,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn clear(&self) {
        let keys: Vec<String> = {
            let mut idx = self.index.lock().unwrap();
            let keys = idx.entries.keys().cloned().collect();
            *idx = Index::default();
            keys
        };
        self.unlink(&keys);
    }
}

impl Default for Cache {
    fn default() -> Self {
        Cache::memory(DEFAULT_BUDGET)
    }
}

fn read_dims(path: &Path) -> Option<(usize, usize)> {
    use std::io::Read;
    let mut head = [0u8; 24];
    let mut f = fs::File::open(path).ok()?;
    f.read_exact(&mut head).ok()?;
    if &head[..4] != b"FSIB" {
        return None;
    }
    let w = u64::from_le_bytes(head[8..16].try_into().ok()?) as usize;
    let h = u64::from_le_bytes(head[16..24].try_into().ok()?) as usize;
    let expected = 24u64.checked_add((w as u64).checked_mul(h as u64)?.checked_mul(8)?)?;
    (f.metadata().ok()?.len() == expected).then_some((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Kind;

    fn img(v: f64) -> ImageBuffer {
        ImageBuffer::filled(4, 4, Kind::Unit, v)
    }

    #[test]
    fn memory_roundtrip_and_lru() {
        let per = image_bytes(&img(0.0));
        let c = Cache::memory(per * 2);
        c.put("a", &img(1.0));
        c.put("b", &img(2.0));
        assert_eq!(c.get("a").unwrap(), img(1.0));
        c.put("c", &img(3.0));
        // b was least recently used
        assert!(!c.contains("b"));
        assert!(c.contains("a") && c.contains("c"));
        assert_eq!(c.stats().entries, 2);
        assert!(c.stats().bytes <= per * 2);
    }

    #[test]
    fn disk_persists_and_rebuilds() {
        let dir = tempfile::tempdir().unwrap();
        {
            let c = Cache::open(dir.path(), DEFAULT_BUDGET).unwrap();
            c.put("k1", &img(7.0));
        }
        let c = Cache::open(dir.path(), DEFAULT_BUDGET).unwrap();
        assert_eq!(c.stats().entries, 1);
        assert_eq!(c.get("k1").unwrap(), img(7.0));
        assert!(c.get("missing").is_none());
        assert_eq!(c.stats().hits, 1);
        assert_eq!(c.stats().misses, 1);
    }

    #[test]
    fn corrupt_file_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cache::open(dir.path(), DEFAULT_BUDGET).unwrap();
        c.put("k", &img(1.0));
        fs::write(dir.path().join(format!("k.{EXT}")), b"junk").unwrap();
        assert!(c.get("k").is_none());
        assert!(!c.contains("k"));
        // reopening ignores unparseable files
        fs::write(dir.path().join(format!("z.{EXT}")), b"junk").unwrap();
        let c = Cache::open(dir.path(), DEFAULT_BUDGET).unwrap();
        assert_eq!(c.stats().entries, 0);
    }

    #[test]
    fn key_separates_fields() {
        assert_ne!(cache_key("ab", "c", "d"), cache_key("a", "bc", "d"));
        assert_eq!(cache_key("a", "b", "c").len(), 64);
    }
}
