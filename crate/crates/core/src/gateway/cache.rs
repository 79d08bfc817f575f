//! Durable response cache: an append-only JSON-lines file, compacted on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;
use crate::metrics::ProbVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub raw_response: String,
    pub probs: ProbVector,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Hex SHA-256 over model name, `top_p` bits and rendered prompt, each
/// length-prefixed so that field boundaries cannot collide.
pub fn cache_key(model: &str, top_p: f64, rendered_prompt: &str) -> String {
    let mut h = Sha256::new();
    for field in [model.as_bytes(), &top_p.to_bits().to_le_bytes(), rendered_prompt.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: HashMap<String, CacheEntry>,
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache file. When the file holds superseded
    /// entries it is rewritten with only the last entry per key.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut entries = HashMap::new();
        let mut lines = 0usize;
        if path.exists() {
            let f = File::open(path).map_err(|e| io_err(path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line)
                    .map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))?;
                lines += 1;
                entries.insert(entry.key.clone(), entry);
            }
        }
        if lines > entries.len() {
            let mut sorted: Vec<&CacheEntry> = entries.values().collect();
            sorted.sort_by(|a, b| (a.timestamp, &a.key).cmp(&(b.timestamp, &b.key)));
            let tmp = path.with_extension("compacting");
            {
                let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
                for e in sorted {
                    let line = serde_json::to_string(e).map_err(|e| io_err(&tmp, e))?;
                    writeln!(w, "{line}").map_err(|e| io_err(&tmp, e))?;
                }
                w.flush().map_err(|e| io_err(&tmp, e))?;
            }
            std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
            log::info!("compacted cache {}: {lines} lines -> {} entries", path.display(), entries.len());
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(ResponseCache {
            entries,
            path: Some(path.to_path_buf()),
            writer: Some(BufWriter::new(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, entry: CacheEntry) -> Result<(), GatewayError> {
        if let Some(w) = self.writer.as_mut() {
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            let line = serde_json::to_string(&entry).map_err(|e| io_err(path, e))?;
            writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
            w.flush().map_err(|e| io_err(path, e))?;
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
