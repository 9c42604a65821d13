//! Binary checkpoint container.
//!
//! Layout (little endian): `SBTM`, u32 version, u64 length + JSON metadata,
//! 32-byte vocabulary hash, u32 tensor count, then per tensor: u32 name
//! length, UTF-8 name, u32 rank, u64 dims, f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, TopicModel};
use crate::autodiff::Tensor;

const MAGIC: &[u8; 4] = b"SBTM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error("malformed tensor record: {0}")]
    Tensor(String),
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint has unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, corpus {corpus}")]
    VocabularyMismatch { checkpoint: String, corpus: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    vocab_size: usize,
    num_slices: usize,
}

/// A model together with the hash of the vocabulary it was trained on.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TopicModel,
    pub vocab_hash: [u8; 32],
}

impl Checkpoint {
    pub fn vocab_hash_hex(&self) -> String {
        hex(&self.vocab_hash)
    }

    /// Refuses a vocabulary other than the training one.
    pub fn check_vocabulary(&self, hash: &[u8; 32]) -> Result<(), CheckpointError> {
        if &self.vocab_hash == hash {
            Ok(())
        } else {
            Err(CheckpointError::VocabularyMismatch {
                checkpoint: self.vocab_hash_hex(),
                corpus: hex(hash),
            })
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &TopicModel, vocab_hash: &[u8; 32]) -> Result<(), CheckpointError> {
    let meta = Meta {
        config: model.config.clone(),
        vocab_size: model.vocab_size,
        num_slices: model.num_slices,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(vocab_hash)?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (_, p) in model.store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

const MAX_META: u64 = 1 << 24;
const MAX_NAME: u32 = 1 << 12;
const MAX_RANK: u32 = 8;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = read_u64(&mut r)?;
    if meta_len > MAX_META {
        return Err(CheckpointError::Metadata(format!("length {meta_len} is implausible")));
    }
    let mut json = vec![0u8; meta_len as usize];
    r.read_exact(&mut json)?;
    let meta: Meta = serde_json::from_slice(&json).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    let vocab_hash = read_array::<32, _>(&mut r)?;
    let mut model = TopicModel::new(meta.config, meta.vocab_size, meta.num_slices)?;
    let count = read_u32(&mut r)? as usize;
    let mut loaded = vec![false; model.store.len()];
    for _ in 0..count {
        let name_len = read_u32(&mut r)?;
        if name_len > MAX_NAME {
            return Err(CheckpointError::Tensor(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Tensor(e.to_string()))?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(CheckpointError::Tensor(format!("`{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let id = model.store.id(&name).ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
        let expected = model.store.value(id).shape().to_vec();
        if expected != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: shape,
            });
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        *model.store.value_mut(id) = Tensor::new(shape, data).map_err(|e| CheckpointError::Tensor(e.to_string()))?;
        loaded[id.0] = true;
    }
    if let Some(i) = loaded.iter().position(|&l| !l) {
        let name = model.store.iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
        return Err(CheckpointError::MissingTensor(name));
    }
    Ok(Checkpoint { model, vocab_hash })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &TopicModel, vocab_hash: &[u8; 32]) -> Result<(), CheckpointError> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), model, vocab_hash)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
