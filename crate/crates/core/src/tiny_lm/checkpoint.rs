//! Binary checkpoint format shared by model weights and domain prefixes.
//!
//! ```text
//! "LMDS" | u16 LE version | u32 LE header length | JSON header | f64 LE tensor data
//! ```
//!
//! The header records the kind of file, the model config, and a manifest of
//! `(name, shape, offset)` entries; offsets are byte offsets into the data
//! section and tensors are stored back to back in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prefix::{DomainPrefix, PrefixMode, PrefixProvenance};
use crate::tensor::Tensor;

use super::params::{LmConfig, LmParams};

pub const MAGIC: &[u8; 4] = b"LMDS";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Params,
    Prefix,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrefixMeta {
    mode: PrefixMode,
    len: usize,
    config_hash: String,
    #[serde(default)]
    provenance: Option<PrefixProvenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    config: LmConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefix: Option<PrefixMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// A decoded checkpoint file.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Params {
        params: LmParams,
        provenance: Option<serde_json::Value>,
    },
    Prefix {
        prefix: DomainPrefix,
        config: LmConfig,
        provenance: Option<serde_json::Value>,
    },
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Checkpoint::Params { .. } => CheckpointKind::Params,
            Checkpoint::Prefix { .. } => CheckpointKind::Prefix,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, config, named, prefix, provenance): (_, _, Vec<(String, &Tensor)>, _, _) =
            match self {
                Checkpoint::Params { params, provenance } => (
                    CheckpointKind::Params,
                    &params.config,
                    params.named_tensors(),
                    None,
                    provenance,
                ),
                Checkpoint::Prefix {
                    prefix,
                    config,
                    provenance,
                } => (
                    CheckpointKind::Prefix,
                    config,
                    prefix.named_tensors(),
                    Some(PrefixMeta {
                        mode: prefix.mode,
                        len: prefix.len,
                        config_hash: prefix.config_hash.clone(),
                        provenance: prefix.provenance.clone(),
                    }),
                    provenance,
                ),
            };
        let mut offset = 0u64;
        let tensors = named
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 8 * t.len() as u64;
                e
            })
            .collect();
        let header = Header {
            kind,
            config: config.clone(),
            tensors,
            prefix,
            provenance: provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(10 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &named {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(bad("missing LMDS magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let data_start = 10 + hlen;
        if bytes.len() < data_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[10..data_start])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.config.validate()?;
        let data = &bytes[data_start..];

        let read = |e: &TensorEntry| -> Result<Tensor> {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("tensor {} runs past end of file", e.name)));
            }
            let values = data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor {
                shape: e.shape.clone(),
                data: values,
            })
        };

        match header.kind {
            CheckpointKind::Params => {
                let mut params = LmParams::zeros(&header.config)?;
                let expected: Vec<(String, Vec<usize>)> = params
                    .named_tensors()
                    .into_iter()
                    .map(|(n, t)| (n, t.shape.clone()))
                    .collect();
                if expected.len() != header.tensors.len() {
                    return Err(bad("tensor manifest does not match config"));
                }
                for ((slot, (name, shape)), entry) in
                    params.tensors_mut().into_iter().zip(&expected).zip(&header.tensors)
                {
                    if &entry.name != name || &entry.shape != shape {
                        return Err(Error::Checkpoint(format!(
                            "manifest entry {} {:?} where {name} {shape:?} expected",
                            entry.name, entry.shape
                        )));
                    }
                    *slot = read(entry)?;
                }
                Ok(Checkpoint::Params {
                    params,
                    provenance: header.provenance,
                })
            }
            CheckpointKind::Prefix => {
                let meta = header.prefix.ok_or_else(|| bad("prefix file without prefix metadata"))?;
                let tensors = header.tensors.iter().map(read).collect::<Result<Vec<_>>>()?;
                let prefix = DomainPrefix {
                    mode: meta.mode,
                    len: meta.len,
                    d_model: header.config.d_model,
                    n_layers: header.config.n_layers,
                    config_hash: meta.config_hash,
                    tensors,
                    provenance: meta.provenance,
                };
                prefix.validate_against(&header.config)?;
                Ok(Checkpoint::Prefix {
                    prefix,
                    config: header.config,
                    provenance: header.provenance,
                })
            }
        }
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, ck.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn save_params(
    path: impl AsRef<Path>,
    params: &LmParams,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    write(
        path.as_ref(),
        &Checkpoint::Params {
            params: params.clone(),
            provenance,
        },
    )
}

pub fn save_prefix(
    path: impl AsRef<Path>,
    prefix: &DomainPrefix,
    config: &LmConfig,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    prefix.validate_against(config)?;
    write(
        path.as_ref(),
        &Checkpoint::Prefix {
            prefix: prefix.clone(),
            config: config.clone(),
            provenance,
        },
    )
}

pub fn load_params(path: impl AsRef<Path>) -> Result<LmParams> {
    match load_checkpoint(path)? {
        Checkpoint::Params { params, .. } => Ok(params),
        Checkpoint::Prefix { .. } => Err(Error::Checkpoint(
            "expected a params checkpoint, found a prefix".into(),
        )),
    }
}

/// Returns the prefix and the config it was tuned against.
pub fn load_prefix(path: impl AsRef<Path>) -> Result<(DomainPrefix, LmConfig)> {
    match load_checkpoint(path)? {
        Checkpoint::Prefix { prefix, config, .. } => Ok((prefix, config)),
        Checkpoint::Params { .. } => Err(Error::Checkpoint(
            "expected a prefix checkpoint, found params".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefix::init_prefix;
    use crate::tiny_lm::params::init_params;

    #[test]
    fn params_roundtrip_bit_exact() {
        let p = init_params(&LmConfig::tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.lmds");
        save_params(&path, &p, Some(serde_json::json!({"seed": 42}))).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(p.content_hash(), q.content_hash());
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LMDS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
    }

    #[test]
    fn prefix_roundtrip_and_kind_flag() {
        let c = LmConfig::tiny();
        let pre = init_prefix(&c, 7, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefix.lmds");
        save_prefix(&path, &pre, &c, None).unwrap();
        let (back, cfg) = load_prefix(&path).unwrap();
        assert_eq!(back, pre);
        assert_eq!(cfg, c);
        assert!(matches!(load_params(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let p = init_params(&LmConfig::tiny()).unwrap();
        let bytes = Checkpoint::Params {
            params: p,
            provenance: None,
        }
        .to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
    }
}
