//! Content-addressed response cache: one JSON file per (model, prompt) key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util::atomic_write_if_absent;

/// Hex SHA-256 of the (model id, prompt) pair; the cache and mock-fixture key.
pub fn prompt_key(model_id: &str, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    prompt_sha256: String,
    response: String,
}

/// Directory-backed cache with insert-if-absent writes. Reads are lock-free;
/// concurrent writers of the same key settle on one file via atomic rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>> {
        let path = self.path_for(key);
        if !path.exists() {
            return Ok(None);
        }
        let entry = read_entry(&path)?;
        Ok(Some(entry.response))
    }

    pub fn put(&self, key: &str, model: &str, response: &str) -> Result<()> {
        let entry = CacheEntry {
            model: model.to_string(),
            prompt_sha256: key.to_string(),
            response: response.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        atomic_write_if_absent(&self.path_for(key), &bytes)
    }
}

fn read_entry(path: &Path) -> Result<CacheEntry> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::Schema(format!("corrupt cache entry {}: {e}", path.display()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_is_stable_and_model_scoped() {
        let a = prompt_key("m1", "hello");
        let b = prompt_key("m1", "hello");
        let c = prompt_key("m2", "hello");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn put_get_roundtrip_and_insert_if_absent() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let key = prompt_key("m", "p");
        assert_eq!(cache.get(&key).unwrap(), None);
        cache.put(&key, "m", "first").unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some("first"));
        // A second put does not overwrite the existing entry.
        cache.put(&key, "m", "second").unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some("first"));
    }
}
