use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

/// One line of the JSONL replay store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key_hash: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
    pub timestamp: String,
}

impl ReplayRecord {
    pub fn new(request: &ChatRequest, response: &ChatResponse) -> Self {
        Self {
            key_hash: request.key_hash(),
            request: request.clone(),
            response: response.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Responses keyed by [`ChatRequest::key_hash`]. The first record for a key
/// wins.
#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    entries: HashMap<String, ChatResponse>,
}

impl ReplayStore {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let mut store = Self::default();
        for record in Self::read_records(path)? {
            store.insert(record.key_hash, record.response);
        }
        Ok(store)
    }

    pub fn read_records(path: &Path) -> Result<Vec<ReplayRecord>, GatewayError> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                GatewayError::Backend(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
            out.push(record);
        }
        Ok(out)
    }

    pub fn insert(&mut self, key_hash: String, response: ChatResponse) {
        self.entries.entry(key_hash).or_insert(response);
    }

    pub fn get(&self, key_hash: &str) -> Option<&ChatResponse> {
        self.entries.get(key_hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Serves responses from a [`ReplayStore`]. A miss is an error unless a
/// fallthrough backend is configured.
pub struct ReplayBackend {
    store: ReplayStore,
    fallthrough: Option<Box<dyn ChatBackend>>,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        Self {
            store,
            fallthrough: None,
        }
    }

    pub fn with_fallthrough(mut self, backend: impl ChatBackend + 'static) -> Self {
        self.fallthrough = Some(Box::new(backend));
        self
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = req.key_hash();
        match (self.store.get(&key), &self.fallthrough) {
            (Some(resp), _) => Ok(resp.clone()),
            (None, Some(live)) => live.complete(req),
            (None, None) => Err(GatewayError::ReplayMiss(key)),
        }
    }
}

/// Append-only JSONL writer; appends are serialized.
pub struct ReplayWriter {
    out: Mutex<BufWriter<File>>,
}

impl ReplayWriter {
    /// Open `path` for appending, creating it if needed.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &ReplayRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}")?;
        out.flush()
    }
}
