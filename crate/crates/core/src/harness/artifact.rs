//! Model directories: `manifest.json` plus little-endian tensor blobs in
//! `params.bin`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Pretrained, Sentence, Vocab};
use crate::decode::ParseTree;
use crate::model::{ModelError, ParserModel};
use crate::tensor::{Precision, Scalar, Tensor};

use super::{Config, HarnessError};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    precision: Precision,
    config: Config,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
    pretrained_tokens: Vec<String>,
    pretrained: Option<TensorEntry>,
    blob_bytes: usize,
    blob_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `model` into directory `dir`, creating it if needed.
pub fn save<T: Scalar>(model: &ParserModel<T>, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut blob = Vec::new();
    let mut push = |name: &str, t: &Tensor<T>| {
        let entry = TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: blob.len() };
        blob.extend(T::to_le_bytes_vec(t.data()));
        entry
    };
    let tensors: Vec<TensorEntry> = model.params.iter().map(|(_, name, t)| push(name, t)).collect();
    let pre = &model.embeddings.pretrained;
    let pretrained = pre.table().map(|t| push("pretrained", t));
    let manifest = Manifest {
        format: "biaffine-parser".into(),
        version: FORMAT_VERSION,
        precision: T::PRECISION,
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        tensors,
        pretrained_tokens: pre.tokens().to_vec(),
        pretrained,
        blob_bytes: blob.len(),
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, &blob).map_err(|e| HarnessError::io(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, json).map_err(|e| HarnessError::io(&manifest_path, e))?;
    Ok(())
}

fn integrity(dir: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Integrity { path: dir.display().to_string(), message: message.into() }
}

fn read_manifest(dir: &Path) -> Result<(Manifest, Vec<u8>), HarnessError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let header: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| integrity(dir, format!("unreadable manifest: {e}")))?;
    let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(HarnessError::Version { path: dir.display().to_string(), found: version, expected: FORMAT_VERSION });
    }
    let manifest: Manifest =
        serde_json::from_value(header).map_err(|e| integrity(dir, format!("malformed manifest: {e}")))?;
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| HarnessError::io(&blob_path, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(integrity(dir, format!("{BLOB} has {} bytes, expected {}", blob.len(), manifest.blob_bytes)));
    }
    if hex(&Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(integrity(dir, format!("{BLOB} checksum mismatch")));
    }
    Ok((manifest, blob))
}

fn read_tensor<T: Scalar>(dir: &Path, blob: &[u8], e: &TensorEntry) -> Result<Tensor<T>, HarnessError> {
    let len: usize = e.shape.iter().product();
    let end = e.offset + len * T::PRECISION.byte_width();
    let bytes = blob.get(e.offset..end).ok_or_else(|| integrity(dir, format!("tensor `{}` out of bounds", e.name)))?;
    Tensor::new(e.shape.clone(), T::from_le_bytes_slice(bytes))
        .map_err(|err| integrity(dir, format!("tensor `{}`: {err}", e.name)))
}

/// Loads a model saved at precision `T`.
pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<ParserModel<T>, HarnessError> {
    let dir = dir.as_ref();
    let (manifest, blob) = read_manifest(dir)?;
    if manifest.precision != T::PRECISION {
        return Err(integrity(
            dir,
            format!("stored at {} precision, requested {}", manifest.precision, T::PRECISION),
        ));
    }
    build(dir, manifest, &blob)
}

fn build<T: Scalar>(dir: &Path, manifest: Manifest, blob: &[u8]) -> Result<ParserModel<T>, HarnessError> {
    let pretrained = match &manifest.pretrained {
        Some(entry) => {
            let table = read_tensor(dir, blob, entry)?;
            Pretrained::from_parts(manifest.pretrained_tokens.clone(), table)?
        }
        None => Pretrained::empty(manifest.config.embedding_size),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ParserModel::new(manifest.config, manifest.vocab, pretrained, &mut rng)?;
    if model.params.len() != manifest.tensors.len() {
        return Err(integrity(
            dir,
            format!("{} tensors stored, model has {}", manifest.tensors.len(), model.params.len()),
        ));
    }
    for entry in &manifest.tensors {
        let id = model
            .params
            .id(&entry.name)
            .ok_or_else(|| integrity(dir, format!("unexpected tensor `{}`", entry.name)))?;
        let t = read_tensor::<T>(dir, blob, entry)?;
        if t.shape() != model.params.get(id).shape() {
            return Err(integrity(dir, format!("tensor `{}` has shape {:?}", entry.name, t.shape())));
        }
        *model.params.get_mut(id) = t;
    }
    Ok(model)
}

/// A loaded model at whichever precision it was saved with.
pub enum AnyModel {
    F32(ParserModel<f32>),
    F64(ParserModel<f64>),
}

impl AnyModel {
    pub fn load(dir: impl AsRef<Path>) -> Result<AnyModel, HarnessError> {
        let dir = dir.as_ref();
        let (manifest, blob) = read_manifest(dir)?;
        Ok(match manifest.precision {
            Precision::F32 => AnyModel::F32(build(dir, manifest, &blob)?),
            Precision::F64 => AnyModel::F64(build(dir, manifest, &blob)?),
        })
    }

    pub fn config(&self) -> &Config {
        match self {
            AnyModel::F32(m) => &m.config,
            AnyModel::F64(m) => &m.config,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            AnyModel::F32(m) => &m.vocab,
            AnyModel::F64(m) => &m.vocab,
        }
    }

    pub fn parse(&self, s: &Sentence, use_mst: bool) -> Result<ParseTree, ModelError> {
        match self {
            AnyModel::F32(m) => m.parse(s, use_mst),
            AnyModel::F64(m) => m.parse(s, use_mst),
        }
    }
}
