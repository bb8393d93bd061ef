//! Content-addressed response cache.
//!
//! Keyed by the request hash of (messages, sampling params); the route key is
//! deliberately not part of the key, so byte-identical requests share one
//! backend call. Entries are JSON files named `<request_hash>.json` in a
//! directory scoped to the inner backend's identity, which keeps completions
//! from one checkpoint out of another checkpoint's runs. Append-only within
//! a run: nothing is ever invalidated, clearing the directory is the reset.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{request_hash, ChatBackend, ChatRequest, Completion};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    /// Recorded request hash; must match the file name on read.
    request_hash: String,
    text: String,
    reported_token_count: Option<u32>,
}

/// Caching wrapper around any backend.
pub struct CachedBackend {
    inner: Box<dyn ChatBackend>,
    dir: PathBuf,
    memory: Mutex<HashMap<String, CacheEntry>>,
}

impl CachedBackend {
    /// Creates the cache at `cache_root/<sanitized inner id>/`.
    pub fn new(inner: Box<dyn ChatBackend>, cache_root: &std::path::Path) -> Result<Self> {
        let scope: String = inner
            .id()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let dir = cache_root.join(scope);
        fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            memory: Mutex::new(HashMap::new()),
        })
    }

    fn entry_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    fn load_from_disk(&self, hash: &str) -> Result<Option<CacheEntry>> {
        let path = self.entry_path(hash);
        if !path.exists() {
            return Ok(None);
        }
        let content = fs::read_to_string(&path)?;
        let entry: CacheEntry = serde_json::from_str(&content).map_err(|e| Error::CacheCorrupt {
            path: path.display().to_string(),
            detail: format!("unreadable entry: {e}"),
        })?;
        if entry.request_hash != hash {
            return Err(Error::CacheCorrupt {
                path: path.display().to_string(),
                detail: format!(
                    "stored hash {} does not match file name {hash}",
                    entry.request_hash
                ),
            });
        }
        Ok(Some(entry))
    }

    fn completion_from(&self, entry: &CacheEntry) -> Completion {
        Completion {
            text: entry.text.clone(),
            reported_token_count: entry.reported_token_count,
            backend_id: self.inner.id(),
            latency_ms: 0,
        }
    }
}

impl ChatBackend for CachedBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion> {
        let hash = request_hash(request.messages, request.params);

        if let Some(entry) = self.memory.lock().expect("cache lock").get(&hash) {
            return Ok(self.completion_from(entry));
        }
        if let Some(entry) = self.load_from_disk(&hash)? {
            let completion = self.completion_from(&entry);
            self.memory.lock().expect("cache lock").insert(hash, entry);
            return Ok(completion);
        }

        let completion = self.inner.complete(request)?;
        let entry = CacheEntry {
            request_hash: hash.clone(),
            text: completion.text.clone(),
            reported_token_count: completion.reported_token_count,
        };
        fs::write(self.entry_path(&hash), serde_json::to_string(&entry)?)?;
        self.memory.lock().expect("cache lock").insert(hash, entry);
        Ok(completion)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}
