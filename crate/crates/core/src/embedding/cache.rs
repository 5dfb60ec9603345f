//! Append-only token cache.
//!
//! File format, one record per line:
//!
//! ```text
//! <64 lowercase hex chars: sha256 key><TAB><v1>,<v2>,...,<v64>\n
//! ```
//!
//! Values use shortest round-trip `f32` formatting. A key may appear more
//! than once; the last occurrence wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::embedding::token::FeatureToken;
use crate::error::{Error, Result};

/// `sha256(prompt || 0x00 || provider_name)` as lowercase hex.
pub fn cache_key(prompt: &str, provider_name: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0u8]);
    h.update(provider_name.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
struct State {
    entries: HashMap<String, FeatureToken>,
    file: Option<File>,
}

/// Thread-safe cache; writes are serialized and visible to readers as soon
/// as `put` returns.
#[derive(Debug)]
pub struct TokenCache {
    path: Option<PathBuf>,
    state: Mutex<State>,
}

fn storage(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Storage(format!("{}: {what}", path.display()))
}

fn parse_line(line: &str) -> Option<(String, FeatureToken)> {
    let (key, values) = line.split_once('\t')?;
    if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    let vals: Option<Vec<f32>> = values.split(',').map(|v| v.parse().ok()).collect();
    let token = FeatureToken::new(vals?).ok()?;
    Some((key.to_string(), token))
}

impl TokenCache {
    pub fn in_memory() -> Self {
        TokenCache {
            path: None,
            state: Mutex::new(State {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Loads an existing cache file (or starts an empty one) and keeps it open for appending.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| storage(&path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| storage(&path, e))?;
                if line.is_empty() {
                    continue;
                }
                let (k, t) =
                    parse_line(&line).ok_or_else(|| storage(&path, format!("malformed record on line {}", n + 1)))?;
                entries.insert(k, t);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| storage(&path, e))?;
        Ok(TokenCache {
            path: Some(path),
            state: Mutex::new(State {
                entries,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<FeatureToken> {
        self.state.lock().expect("cache lock").entries.get(key).cloned()
    }

    pub fn put(&self, key: &str, token: &FeatureToken) -> Result<()> {
        let mut st = self.state.lock().expect("cache lock");
        if let Some(file) = st.file.as_mut() {
            let vals: Vec<String> = token.values().iter().map(|v| v.to_string()).collect();
            let line = format!("{key}\t{}\n", vals.join(","));
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            file.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
            file.flush().map_err(|e| storage(path, e))?;
        }
        st.entries.insert(key.to_string(), token.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
