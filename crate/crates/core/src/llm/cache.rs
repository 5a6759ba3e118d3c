//! Content-addressed response cache.
//!
//! Layout under the cache directory, one pair per request digest:
//!
//! ```text
//! <digest>.txt   raw response text
//! <digest>.json  metadata sidecar
//! ```
//!
//! Digests are lowercase hex SHA-256 (see [`cache_key`](super::cache_key)).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;

/// Name of the digest algorithm, recorded in sidecars and manifests.
pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub digest_algorithm: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub prompt_chars: usize,
    pub response_chars: usize,
    pub tag: Option<String>,
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            mem: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(hit) = self.mem.lock().unwrap().get(key) {
            return Some(hit.clone());
        }
        let dir = self.dir.as_ref()?;
        let text = fs::read_to_string(dir.join(format!("{key}.txt"))).ok()?;
        self.mem.lock().unwrap().insert(key.to_string(), text.clone());
        Some(text)
    }

    pub fn put(&self, key: &str, text: &str, meta: &CacheMeta) -> std::io::Result<()> {
        self.mem.lock().unwrap().insert(key.to_string(), text.to_string());
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(format!("{key}.txt")), text.as_bytes())?;
            let sidecar = serde_json::to_vec_pretty(meta).expect("cache meta serializes");
            write_atomic(&dir.join(format!("{key}.json")), &sidecar)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
