use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{request_digest, ChatModel, FinishReason, ModelError, ModelRequest, ModelResponse};

/// One cached response, stored at `<dir>/<first two hex>/<digest>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: Value,
    pub response_text: String,
    pub finish_reason: FinishReason,
}

/// Content-addressed response store. Writes go to a temp file in the same
/// directory and are renamed into place.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    dir: PathBuf,
}

impl ReplayCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, digest: &str) -> PathBuf {
        let prefix = digest.get(..2).unwrap_or(digest);
        self.dir.join(prefix).join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<CacheEntry>, ModelError> {
        let path = self.entry_path(digest);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ModelError::MalformedResponse(format!("cache entry {}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(ModelError::CacheIo { path, source }),
        }
    }

    pub fn put(&self, req: &ModelRequest, text: &str, finish_reason: FinishReason) -> Result<PathBuf, ModelError> {
        let digest = request_digest(req);
        let path = self.entry_path(&digest);
        let parent = path.parent().expect("entry path has a parent").to_path_buf();
        let io_err = |source| ModelError::CacheIo { path: path.clone(), source };

        fs::create_dir_all(&parent).map_err(io_err)?;
        let entry = CacheEntry { request: req.canonical_value(), response_text: text.to_string(), finish_reason };
        let body = serde_json::to_vec_pretty(&entry).expect("cache entries serialize");
        let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(io_err)?;
        tmp.write_all(&body).map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(path)
    }
}

impl ChatModel for ReplayCache {
    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        req.validate()?;
        let started = Instant::now();
        let digest = request_digest(req);
        match self.get(&digest)? {
            Some(entry) => Ok(ModelResponse {
                text: entry.response_text,
                finish_reason: entry.finish_reason,
                latency: started.elapsed(),
                from_cache: true,
            }),
            None => Err(ModelError::CacheMiss(digest)),
        }
    }
}
