//! Append-only replay cache of completion requests and responses.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::wire::{CompletionRequest, CompletionResponse};
use super::GatewayError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_hash: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

/// Responses keyed by request hash, optionally persisted as JSONL.
#[derive(Debug, Default)]
pub struct ReplayCache {
    entries: Mutex<HashMap<String, CompletionResponse>>,
    sink: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path` (if present) and appends new ones to it.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| GatewayError::Cache(e.to_string()))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::Cache(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)
                    .map_err(|e| GatewayError::Cache(format!("line {}: {e}", i + 1)))?;
                entries.insert(rec.request_hash, rec.response);
            }
        }
        let sink = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Self {
            entries: Mutex::new(entries),
            sink: Mutex::new(Some(sink)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, request: &CompletionRequest) -> Option<CompletionResponse> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(&request.hash())
            .cloned()
    }

    pub fn put(
        &self,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> Result<(), GatewayError> {
        let hash = request.hash();
        let fresh = self
            .entries
            .lock()
            .expect("cache lock")
            .insert(hash.clone(), response.clone())
            .is_none();
        if !fresh {
            return Ok(());
        }
        if let Some(f) = self.sink.lock().expect("cache sink lock").as_mut() {
            let rec = CacheRecord {
                request_hash: hash,
                request: request.clone(),
                response: response.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| GatewayError::Cache(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| GatewayError::Cache(e.to_string()))?;
            f.flush().map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(())
    }
}
