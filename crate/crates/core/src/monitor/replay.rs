//! Replay cache keyed by template name and prompt digest.
//!
//! Strict mode answers only from the cache; record mode forwards misses to
//! an inner backend and appends the completion to the cache file.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError, BackendRequest, BackendResponse};

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub template: String,
    pub prompt_sha256: String,
    pub completion: String,
}

impl ReplayEntry {
    pub fn new(template: &str, prompt: &str, completion: impl Into<String>) -> Self {
        Self { template: template.to_string(), prompt_sha256: prompt_digest(prompt), completion: completion.into() }
    }
}

pub enum ReplayMode {
    Strict,
    Record(Box<dyn Backend>),
}

pub struct ReplayBackend {
    path: PathBuf,
    mode: ReplayMode,
    entries: RwLock<HashMap<(String, String), String>>,
    writer: Mutex<()>,
}

impl ReplayBackend {
    /// Open a cache file. A missing file is an empty cache in record mode
    /// and an error in strict mode.
    pub fn open(path: &Path, mode: ReplayMode) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = std::fs::File::open(path).map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: ReplayEntry = serde_json::from_str(&line)
                    .map_err(|e| BackendError::Cache(format!("{}:{}: {e}", path.display(), idx + 1)))?;
                // Later lines override earlier ones.
                entries.insert((entry.template, entry.prompt_sha256), entry.completion);
            }
        } else if matches!(mode, ReplayMode::Strict) {
            return Err(BackendError::Cache(format!("{} does not exist", path.display())));
        }
        Ok(Self { path: path.to_path_buf(), mode, entries: RwLock::new(entries), writer: Mutex::new(()) })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("replay cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, entry: &ReplayEntry) -> Result<(), BackendError> {
        let _guard = self.writer.lock().expect("replay writer lock");
        let line = serde_json::to_string(entry).map_err(|e| BackendError::Cache(e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{line}").map_err(|e| BackendError::Cache(format!("{}: {e}", self.path.display())))
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn query(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let key = (request.template.clone(), prompt_digest(&request.prompt));
        if let Some(text) = self.entries.read().expect("replay cache lock").get(&key) {
            return Ok(BackendResponse::text(text.clone()));
        }
        match &self.mode {
            ReplayMode::Strict => Err(BackendError::CacheMiss { template: key.0, prompt_sha256: key.1 }),
            ReplayMode::Record(inner) => {
                let response = inner.query(request)?;
                let entry = ReplayEntry { template: key.0.clone(), prompt_sha256: key.1.clone(), completion: response.text.clone() };
                self.append(&entry)?;
                self.entries.write().expect("replay cache lock").insert(key, response.text.clone());
                Ok(response)
            }
        }
    }
}
