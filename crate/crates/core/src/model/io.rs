//! Model files.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "MMOD"
//! 4       1      version (1)
//! 5       4      header length L, u32 little-endian
//! 9       L      JSON header {"config", "meta", "params": [{"name", "shape"}]}
//! 9+L     ...    one MMT1 tensor record per parameter, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::tensor_io::{decode_tensor, encode_tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::params::{named, ParamTree};
use crate::tensor::{Rng, Tensor};

pub const MODEL_MAGIC: &[u8; 4] = b"MMOD";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    meta: Value,
    params: Vec<ParamEntry>,
}

pub fn encode_model(model: &Model, meta: &Value) -> Result<Vec<u8>> {
    let leaves = named(&model.params);
    let header = Header {
        config: model.config.clone(),
        meta: meta.clone(),
        params: leaves
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Contract("model header too large".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in leaves {
        out.extend_from_slice(&encode_tensor(t)?);
    }
    Ok(out)
}

fn truncated(at: usize, what: &str) -> Error {
    Error::Format {
        offset: at,
        msg: format!("file ends inside {what}"),
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(Model, Value)> {
    if bytes.len() < 4 {
        return Err(truncated(bytes.len(), "magic"));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a model file (bad magic)".into(),
        });
    }
    let version = *bytes.get(4).ok_or_else(|| truncated(bytes.len(), "version"))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let len_bytes = bytes.get(5..9).ok_or_else(|| truncated(bytes.len(), "header length"))?;
    let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(9..9 + len)
        .ok_or_else(|| truncated(bytes.len(), "JSON header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format {
        offset: 9,
        msg: format!("bad JSON header: {e}"),
    })?;
    header.config.validate()?;

    // A fresh tree fixes the expected names and shapes; its values are discarded.
    let template = ModelParams::init(&header.config, &mut Rng::new(0))?;
    let expected = named(&template);
    if expected.len() != header.params.len() {
        return Err(Error::Format {
            offset: 9,
            msg: format!(
                "header lists {} parameters, configuration implies {}",
                header.params.len(),
                expected.len()
            ),
        });
    }
    let mut pos = 9 + len;
    let mut tensors: Vec<Tensor> = Vec::with_capacity(expected.len());
    for ((name, t), entry) in expected.iter().zip(&header.params) {
        if *name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Format {
                offset: 9,
                msg: format!(
                    "parameter {} {:?} does not match expected {name} {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                ),
            });
        }
        let start = pos;
        let (tensor, used) = decode_tensor(&bytes[pos..], pos)?;
        if tensor.shape() != t.shape() {
            return Err(Error::Format {
                offset: start,
                msg: format!("tensor for {name} has shape {:?}", tensor.shape()),
            });
        }
        pos += used;
        tensors.push(tensor);
    }
    if pos != bytes.len() {
        return Err(Error::Format {
            offset: pos,
            msg: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    let mut it = tensors.into_iter();
    let params = template.map_params(&mut |_| it.next().expect("counted above"));
    Ok((Model::from_parts(header.config, params), header.meta))
}

pub fn save_model_with_meta(model: &Model, meta: &Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    save_model_with_meta(model, &Value::Null, path)
}

pub fn load_model_with_meta(path: impl AsRef<Path>) -> Result<(Model, Value)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Ok(load_model_with_meta(path)?.0)
}
