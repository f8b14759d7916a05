use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use super::{GatewayError, LlmRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedText {
    pub text: String,
    pub model: String,
}

/// On-disk layout of one cached exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: LlmRequest,
    pub response: CachedText,
}

/// Response cache with an in-memory layer and an optional directory of
/// `llm/<first two hex chars>/<key>.json` files.
#[derive(Debug, Default)]
pub struct ResponseCache {
    root: Option<PathBuf>,
    memory: DashMap<String, String>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// `root` is the cache directory; entries live under `root/llm/`.
    pub fn on_disk(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
            memory: DashMap::new(),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn entry_path(&self, key: &str) -> Option<PathBuf> {
        let prefix = key.get(..2).unwrap_or(key);
        self.root
            .as_ref()
            .map(|r| r.join("llm").join(prefix).join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, GatewayError> {
        if let Some(text) = self.memory.get(key) {
            return Ok(Some(text.clone()));
        }
        let Some(path) = self.entry_path(key) else {
            return Ok(None);
        };
        let raw = match fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if entry.key != key {
            return Err(GatewayError::Cache(format!(
                "{} holds key {} instead of {key}",
                path.display(),
                entry.key
            )));
        }
        self.memory.insert(key.to_string(), entry.response.text.clone());
        Ok(Some(entry.response.text))
    }

    pub fn put(&self, key: &str, request: &LlmRequest, text: &str) -> Result<(), GatewayError> {
        if let Some(path) = self.entry_path(key) {
            let entry = CacheEntry {
                key: key.to_string(),
                request: request.clone(),
                response: CachedText {
                    text: text.to_string(),
                    model: request.model.clone(),
                },
            };
            write_atomic(&path, &entry)
                .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        }
        self.memory.insert(key.to_string(), text.to_string());
        Ok(())
    }
}

fn write_atomic(path: &Path, entry: &CacheEntry) -> std::io::Result<()> {
    let dir = path.parent().expect("cache entries live in a directory");
    fs::create_dir_all(dir)?;
    let mut body = serde_json::to_string_pretty(entry)?;
    body.push('\n');
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        entry.key,
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GenerationParams;

    #[test]
    fn disk_layout_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let req = GenerationParams::new("m").request("What is andromeda tree?");
        let key = req.cache_key();
        let cache = ResponseCache::on_disk(dir.path());
        cache.put(&key, &req, "A shrub.").unwrap();

        let path = dir.path().join("llm").join(&key[..2]).join(format!("{key}.json"));
        assert!(path.is_file());
        let entry: CacheEntry = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(entry.request, req);
        assert_eq!(entry.response.text, "A shrub.");

        let fresh = ResponseCache::on_disk(dir.path());
        assert_eq!(fresh.get(&key).unwrap().as_deref(), Some("A shrub."));
        assert_eq!(fresh.get("00ff").unwrap(), None);
    }

    #[test]
    fn corrupt_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path());
        let path = cache.entry_path("abcd").unwrap();
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(cache.get("abcd"), Err(GatewayError::Cache(_))));
    }
}
