//! Append-only response store.
//!
//! One JSON object per line: `{"key": "<hex>", "content": "..."}` for chat
//! completions or `{"key": "<hex>", "vector": [...]}` for embeddings. Later
//! lines win when a key repeats.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::CacheKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CachedValue {
    Completion(String),
    Embedding(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: CacheKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, CachedValue>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Loads `path` if it exists and appends new entries to it.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: Line = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
                })?;
                let value = match (parsed.content, parsed.vector) {
                    (Some(c), None) => CachedValue::Completion(c),
                    (None, Some(v)) => CachedValue::Embedding(v),
                    _ => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}:{}: need exactly one of content/vector", path.display(), n + 1),
                        ))
                    }
                };
                entries.insert(parsed.key, value);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedValue> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.read().expect("cache lock poisoned").contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keys in sorted order.
    pub fn keys(&self) -> Vec<CacheKey> {
        let mut keys: Vec<CacheKey> =
            self.entries.read().expect("cache lock poisoned").keys().cloned().collect();
        keys.sort();
        keys
    }

    pub fn insert(&self, key: CacheKey, value: CachedValue) -> io::Result<()> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(file) = writer.as_mut() {
            let line = match &value {
                CachedValue::Completion(c) => {
                    Line { key: key.clone(), content: Some(c.clone()), vector: None }
                }
                CachedValue::Embedding(v) => {
                    Line { key: key.clone(), content: None, vector: Some(v.clone()) }
                }
            };
            let mut buf = serde_json::to_vec(&line).map_err(io::Error::other)?;
            buf.push(b'\n');
            file.write_all(&buf)?;
            file.flush()?;
        }
        self.entries.write().expect("cache lock poisoned").insert(key, value);
        Ok(())
    }
}
