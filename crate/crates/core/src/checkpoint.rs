//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   "DXPTCKPT"
//! version     u32       FORMAT_VERSION
//! header_len  u64
//! header      header_len bytes of UTF-8 JSON (see `Header`)
//! payload     raw little-endian parameter values, in header order
//! ```
//!
//! The header echoes the model config, the vocabulary, the training config
//! and every tensor's name, shape and byte range, so a checkpoint is
//! self-describing. Values are stored verbatim, so loading is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use numcore::{Precision, Real};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Vocab};
use crate::model::{Model, ModelConfig, ModelError};

pub const MAGIC: &[u8; 8] = b"DXPTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: unsupported checkpoint format version {found} (this build reads {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model_config: ModelConfig,
    vocab: Vec<String>,
    train_config: serde_json::Value,
    label: String,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to use or resume it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab: Vocab,
    /// Echo of the configuration that produced the weights.
    pub train_config: serde_json::Value,
    /// Free-form provenance tag, e.g. `stage1` or `final`.
    pub label: String,
}

fn dtype_name(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let store = &self.model.store;
        let mut tensors = Vec::with_capacity(store.len());
        let mut payload = Vec::new();
        for id in store.ids() {
            let value = store.get(id);
            let bytes = f32::to_le_vec(value.data());
            tensors.push(TensorEntry {
                name: store.name(id).to_string(),
                shape: value.shape().to_vec(),
                offset: payload.len(),
                len: bytes.len(),
            });
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            dtype: dtype_name(f32::PRECISION).to_string(),
            model_config: self.model.config().clone(),
            vocab: self.vocab.body().to_vec(),
            train_config: self.train_config.clone(),
            label: self.label.clone(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let format = |reason: &str| CheckpointError::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(format("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                path: path.to_path_buf(),
                found: version,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(format("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| format(&format!("header: {e}")))?;
        if header.dtype != dtype_name(f32::PRECISION) {
            return Err(format(&format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &body[header_len..];
        let mut named = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let end = t.offset.checked_add(t.len).filter(|&e| e <= payload.len());
            let end = end.ok_or_else(|| format(&format!("tensor `{}` runs past end of file", t.name)))?;
            if t.len != t.shape.iter().product::<usize>() * 4 {
                return Err(format(&format!("tensor `{}` length disagrees with its shape", t.name)));
            }
            named.push((t.name.clone(), t.shape.clone(), f32::from_le_slice(&payload[t.offset..end])));
        }
        let mut model = Model::new(header.model_config, 0)?;
        model.load_params(&named)?;
        Ok(Self {
            model,
            vocab: Vocab::from_tokens(header.vocab)?,
            train_config: header.train_config,
            label: header.label,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path)
}

/// [`write_file_atomic`] with checkpoint error context.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    write_file_atomic(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(tie: bool) -> Checkpoint {
        let vocab = Vocab::from_tokens(["alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect()).unwrap();
        let mut cfg = ModelConfig::tiny(vocab.len());
        cfg.tie_towers = tie;
        Checkpoint {
            model: Model::new(cfg, 9).unwrap(),
            vocab,
            train_config: serde_json::json!({"seed": 9, "paradigm": "contrastive"}),
            label: "final".into(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for tie in [true, false] {
            let ck = sample(tie);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.ckpt");
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back.vocab, ck.vocab);
            assert_eq!(back.train_config, ck.train_config);
            assert_eq!(back.label, "final");
            assert_eq!(back.model.config(), ck.model.config());
            for id in ck.model.store.ids() {
                let a: Vec<u32> = ck.model.store.get(id).data().iter().map(|x| x.to_bits()).collect();
                let b: Vec<u32> = back.model.store.get(id).data().iter().map(|x| x.to_bits()).collect();
                assert_eq!(a, b, "{}", ck.model.store.name(id));
            }
            assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }

    #[test]
    fn rejects_garbage_and_future_versions() {
        let p = Path::new("x.ckpt");
        assert!(matches!(
            Checkpoint::from_bytes(b"not a checkpoint at all", p),
            Err(CheckpointError::Format { .. })
        ));
        let mut bytes = sample(true).to_bytes();
        bytes[8] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, p),
            Err(CheckpointError::Version { found: 2, .. })
        ));
        let bytes = sample(true).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4], p).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
