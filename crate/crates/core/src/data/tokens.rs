//! Feature tokens stored beside a dataset manifest.
//!
//! `tokens.jsonl` holds one `{"id": ..., "token": [64 values]}` line per
//! subject in manifest order; `tokens_meta.json` records how they were made.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synth::read_jsonl;
use crate::embedding::FeatureToken;
use crate::error::{Error, Result};

pub const TOKENS_FILE: &str = "tokens.jsonl";
pub const TOKENS_META_FILE: &str = "tokens_meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensMeta {
    pub provider: String,
    pub shots: u8,
    /// Whether prompts quoted pooled image features from a model checkpoint.
    pub image_summary: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenLine {
    id: String,
    token: Vec<f32>,
}

pub fn write_tokens(root: impl AsRef<Path>, tokens: &[(String, FeatureToken)], meta: &TokensMeta) -> Result<()> {
    let root = root.as_ref();
    let path = root.join(TOKENS_FILE);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    for (id, t) in tokens {
        let line = TokenLine {
            id: id.clone(),
            token: t.values().to_vec(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let meta_path = root.join(TOKENS_META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(&meta_path, e))
}

/// Token per subject id, plus the metadata written alongside.
pub fn load_tokens(root: impl AsRef<Path>) -> Result<(HashMap<String, FeatureToken>, TokensMeta)> {
    let root = root.as_ref();
    let lines: Vec<TokenLine> = read_jsonl(&root.join(TOKENS_FILE))?;
    let mut out = HashMap::with_capacity(lines.len());
    for l in lines {
        let t = FeatureToken::new(l.token).map_err(|e| Error::Validation(format!("token for {}: {e}", l.id)))?;
        out.insert(l.id, t);
    }
    let meta_path = root.join(TOKENS_META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    Ok((out, serde_json::from_str(&text)?))
}
